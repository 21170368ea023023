# Tests for the urban form taxonomy engine
