import sys

from esp_creatures.cli import main

sys.exit(main())
