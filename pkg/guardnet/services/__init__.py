from guardnet.services.ttp_service import TrustedThirdParty
from guardnet.services.auth_service import AuthService, NonceLedger
from guardnet.services.guard_service import GuardService
from guardnet.services.overlay_service import OverlayService
from guardnet.services.adversary_service import AdversaryService

__all__ = [
    "TrustedThirdParty",
    "AuthService",
    "NonceLedger",
    "GuardService",
    "OverlayService",
    "AdversaryService",
]
