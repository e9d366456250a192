from dotenv import load_dotenv
import sys

load_dotenv()

from trrsim.cli import main  # noqa: E402  (TRRSIM_OUTPUT_DIR must be loaded first)

if __name__ == '__main__':
    sys.exit(main())
