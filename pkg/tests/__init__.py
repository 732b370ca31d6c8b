# Tests for BookStore API