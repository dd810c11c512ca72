# Tests package for tgvfm-desk
