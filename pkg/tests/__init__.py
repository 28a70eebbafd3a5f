"""DynoClust test suite."""
