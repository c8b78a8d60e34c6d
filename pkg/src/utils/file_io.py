"""
File I/O utilities for nbv-grasp-sim

Scene, scenario and override files are read with encoding detection; every output the
benchmark writes goes through write_text_file so files are utf-8 with LF line endings.
"""

import json
import os
from typing import Any, Dict

import chardet

# Bytes sampled for encoding detection
SAMPLE_SIZE = 4096


def detect_encoding(file_path: str) -> str:
    """
    Guess the encoding of a hand-edited input file.

    Args:
        file_path: Path to the file

    Returns:
        str: 'ascii' for pure ASCII content, otherwise chardet's guess, falling back to
        utf-8 when chardet is unsure or the sample decodes as utf-8
    """
    with open(file_path, 'rb') as f:
        sample = f.read(SAMPLE_SIZE)

    try:
        sample.decode('ascii')
        return 'ascii'
    except UnicodeDecodeError:
        pass
    try:
        sample.decode('utf-8')
        return 'utf-8'
    except UnicodeDecodeError:
        # A sample cut inside a multi-byte sequence still counts
        pass

    guess = chardet.detect(sample)
    return guess['encoding'] or 'utf-8'


def read_text_file(file_path: str) -> str:
    """
    Read a whole text file in its detected encoding.

    Raises:
        FileNotFoundError: If file doesn't exist
    """
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"File not found: {file_path}")

    try:
        with open(file_path, 'r', encoding=detect_encoding(file_path)) as f:
            return f.read()
    except UnicodeDecodeError:
        with open(file_path, 'r', encoding='utf-8') as f:
            return f.read()


def read_json_file(file_path: str) -> Dict[str, Any]:
    """
    Read and parse a JSON file with encoding detection.

    Args:
        file_path: Path to the JSON file

    Returns:
        Dict: Parsed JSON data

    Raises:
        FileNotFoundError: If file doesn't exist
        json.JSONDecodeError: If JSON is invalid; lineno and colno locate the error
    """
    return json.loads(read_text_file(file_path))


def write_text_file(file_path: str, content: str, encoding: str = 'utf-8') -> None:
    """
    Write text content, creating parent directories as needed.

    Args:
        file_path: Path to write
        content: Content to write
        encoding: Encoding to use, defaults to utf-8

    Raises:
        PermissionError: If write permission is denied
        OSError: For other I/O errors
    """
    ensure_directory(os.path.dirname(os.path.abspath(file_path)))

    try:
        with open(file_path, 'w', encoding=encoding, newline='\n') as f:
            f.write(content)
    except PermissionError:
        raise PermissionError(f"Permission denied when writing to {file_path}")
    except OSError as e:
        raise OSError(f"Error writing to {file_path}: {e}")


def ensure_directory(directory_path: str) -> None:
    """
    Raises:
        PermissionError: If the directory cannot be created
    """
    if os.path.isdir(directory_path):
        return
    try:
        os.makedirs(directory_path, exist_ok=True)
    except PermissionError:
        raise PermissionError(f"Permission denied when creating directory {directory_path}")


def check_writable_directory(directory_path: str) -> None:
    """
    Create an output directory if needed and make sure it can be written.

    Raises:
        PermissionError: If the directory cannot be created or written
    """
    ensure_directory(directory_path)
    if not os.access(directory_path, os.W_OK):
        raise PermissionError(f"No write permission for output directory: {directory_path}")
