import sys
from pathlib import Path

# Tests import the naive oracle module that lives next to them.
sys.path.insert(0, str(Path(__file__).parent))
