# Tests for panorama-iqa-toolkit
