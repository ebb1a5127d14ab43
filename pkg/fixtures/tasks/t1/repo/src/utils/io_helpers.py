"""Shared dataset IO helpers used by feature scripts."""


def read_parquet_dataset(path, columns=None):
    """Read a parquet dataset directory into a list of row dicts."""
    raise NotImplementedError("fixture stub")


def write_parquet_dataset(rows, path):
    """Write rows to a parquet dataset directory, replacing it."""
    raise NotImplementedError("fixture stub")


def resolve_bucket(config, bucket):
    """Map a logical bucket name from the config to a concrete path."""
    raise NotImplementedError("fixture stub")
