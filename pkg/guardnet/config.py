from pydantic_settings import BaseSettings
from typing import Optional

class Settings(BaseSettings):
    # Application
    APP_NAME: str = "Guard Skip Graph Simulator"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Identifiers
    NAME_ID_BITS: int = 32
    NUMERICAL_ID_BITS: int = 64
    NONCE_BYTES: int = 16

    # TTP
    CHALLENGE_COUNT: int = 3
    CHALLENGE_BYTES: int = 16
    NAME_KEY_BITS: int = 1024
    FEISTEL_ROUNDS: int = 10

    # Authentication layer
    NONCE_LEDGER_CAPACITY: int = 65536
    MAX_HOPS: int = 64

    # Communication layer
    ENVELOPE_HEADER_BYTES: int = 16
    DEFAULT_LATENCY_BASE_US: int = 1000
    DEFAULT_LATENCY_JITTER_US: int = 200
    SEARCH_TIMEOUT_US: int = 2_000_000
    CONTROL_TIMEOUT_US: int = 5_000_000

    # Virtual compute cost model (microseconds per operation)
    COST_ROUTE_US: int = 5
    COST_SIGN_US: int = 60
    COST_VERIFY_US: int = 120
    COST_PARTIAL_SIGN_US: int = 250
    COST_COMBINE_US: int = 30

    # Demo scenario defaults
    DEFAULT_MESSAGE_COUNT: int = 1000
    DEFAULT_WAIT_TIME_MAX_S: int = 5
    DEFAULT_MESSAGE_LENGTH: int = 300
    DEFAULT_TIME_SCALE: int = 1000
    DEFAULT_CONTROLLER_HOST: str = "controller"
    DEFAULT_CONTROLLER_PORT: int = 9000
    TTP_HOST: str = "ttp"
    TTP_PORT: int = 9100
    NODE_PORT: int = 9200

    # Output
    OUTPUT_DIR: str = "results"
    CHAIN_DUMP_LIMIT: int = 1
    EVENT_LOG_FILE: Optional[str] = None

    class Config:
        env_file = ".env"
        case_sensitive = True

settings = Settings()
