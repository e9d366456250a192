import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    # Only the output directory may be overridden from the environment.
    OUTPUT_DIR = os.environ.get('TRRSIM_OUTPUT_DIR')

    @classmethod
    def output_dir(cls, default: str) -> str:
        return os.environ.get('TRRSIM_OUTPUT_DIR') or cls.OUTPUT_DIR or default
