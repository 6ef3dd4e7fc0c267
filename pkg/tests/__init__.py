# Tests for attend_affect
