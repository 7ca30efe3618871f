from ._adam import Adam, AdamState, global_norm
