import sys

from attend_affect.run_pipeline import main

if __name__ == "__main__":
    sys.exit(main())
