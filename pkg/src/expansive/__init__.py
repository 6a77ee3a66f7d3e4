"""Action-minimizing expansive motions of the Newtonian N-body problem."""
