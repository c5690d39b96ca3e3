from guardnet.config import settings

__version__ = settings.APP_VERSION
