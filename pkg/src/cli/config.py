from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging
    log_level: str = "INFO"

    # Execution
    threads: int = 1
    seed: int = 0
    output_dir: str = "./results"
    show_progress: bool = True

    # Monte Carlo estimator
    bootstrap_blocks: int = 32
    burn_in_fraction: float = 0.1

    model_config = {"env_file": ".env", "case_sensitive": False}


settings = Settings()
