from .app import ShimConfig, create_app

__version__ = "0.1.0"

__all__ = ["ShimConfig", "create_app", "__version__"]
