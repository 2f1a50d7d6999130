from pathlib import Path


def ensure_unit_interval(value: float) -> float:
    """
    Ensure a parameter lies in the open interval (0, 1).

    :raises ValueError: If the value is outside (0, 1).
    """
    if not 0.0 < value < 1.0:
        raise ValueError(f"{value} must lie strictly between 0 and 1.")
    return value


def ensure_output_directory(folder: Path) -> Path:
    """
    Ensure the output directory exists, creating it (and parents) if needed.

    :param folder: Directory that will receive result files.
    :return: The same folder path.
    :raises ValueError: If the path exists but is not a directory.
    """
    if folder.exists() and not folder.is_dir():
        raise ValueError(f"{folder} is not a valid directory.")
    folder.mkdir(parents=True, exist_ok=True)
    return folder
