import logging
import os
import re

logger = logging.getLogger(__name__)


def get_resource(uri: str, must_exist: bool = True) -> str:
    """Resolve a path or a `file:` / `env:` uri to a local filesystem path."""
    if uri.startswith('file://'):
        path = uri[7:]
    elif uri.startswith('file:'):
        path = uri[5:]
    elif uri.startswith('env:'):
        name = uri[4:]
        if name not in os.environ:
            raise ValueError(f"Environment variable '{name}' for uri '{uri}' is not set")
        path = os.environ[name]
    else:
        # anything that looks like a scheme is unsupported; a 2-char match is a windows drive
        m = re.match(r"^\w+\:", uri)
        if m is None or m.span()[1] == 2:
            path = uri
        else:
            raise ValueError(f"Unsupported uri scheme in '{uri}'")

    path = os.path.expanduser(path)
    if not must_exist or os.path.exists(path):
        if path != uri:
            logger.debug(f"Resolved '{uri}' to '{path}'")
        return path
    raise ValueError(f"Target path '{path}' for uri '{uri}' does not exist")
