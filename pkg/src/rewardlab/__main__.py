"""Allow ``python -m rewardlab`` as an alias for the console script."""

from .cli import main

main()
