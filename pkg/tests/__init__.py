# Tests for ckm-edge
