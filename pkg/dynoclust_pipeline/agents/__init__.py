"""Pipeline agent modules."""
