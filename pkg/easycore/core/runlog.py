"""EasyCore — Console and run-log file setup."""

import logging
import os

CONSOLE_FORMAT = "[%(name)s] %(message)s"
FILE_FORMAT = "[%(asctime)s] %(levelname)s [%(name)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def resolve_log_path(save_log_path, log_file_name, output_dir):
    """Normalize log file directory and name; '.log' is appended when missing."""
    if save_log_path is None or str(save_log_path).strip() == "":
        save_log_path = output_dir

    if log_file_name is None or log_file_name.strip() == "":
        log_file_name = "easycore"

    if not log_file_name.lower().endswith(".log"):
        log_file_name += ".log"

    return os.path.join(save_log_path, log_file_name)


def configure_logging(level=logging.INFO, log_path=None):
    """Install the console handler and, optionally, an appending file handler.

    Safe to call more than once; handlers installed by a previous call are
    replaced.
    """
    root = logging.getLogger("easycore")
    root.setLevel(level)
    for handler in list(root.handlers):
        if getattr(handler, "_easycore", False):
            root.removeHandler(handler)
            handler.close()

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    console._easycore = True
    root.addHandler(console)

    if log_path:
        os.makedirs(os.path.dirname(log_path) or ".", exist_ok=True)
        file_handler = logging.FileHandler(log_path, mode="a", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
        file_handler._easycore = True
        root.addHandler(file_handler)
        root.debug("appending run log to %s", log_path)

    return root
