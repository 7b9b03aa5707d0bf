"""Services shared by the CLI and the HTTP surface: config parsing, registry, runs and artifacts."""
