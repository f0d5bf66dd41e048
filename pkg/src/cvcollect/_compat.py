try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

try:
    import tomllib as _toml
except ImportError:  # python < 3.11
    import tomli as _toml


def load_toml(text: str) -> dict:
    return _toml.loads(text)
