"""Edge-level topology generator trained with policy gradients."""
