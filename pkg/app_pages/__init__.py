# Page modules for the results viewer.
