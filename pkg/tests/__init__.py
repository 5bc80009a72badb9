# Tests package for ddereach
