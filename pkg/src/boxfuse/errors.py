"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions or channel counts do not line up."""


class ConfigError(ValueError):
    """A grid, schema or network configuration is invalid."""


class DecodeError(ValueError):
    """A message or code cannot be decoded under the given schema."""


class BudgetError(RuntimeError):
    """Total message size exceeds the communication budget."""

    def __init__(self, budget_bits: int, per_agent_bits: dict[str, int]):
        self.budget_bits = budget_bits
        self.per_agent_bits = dict(per_agent_bits)
        total = sum(self.per_agent_bits.values())
        breakdown = ", ".join(f"{k}={v // 8}B" for k, v in self.per_agent_bits.items())
        super().__init__(
            f"budget exceeded: {total // 8} bytes > {budget_bits // 8} bytes ({breakdown})"
        )
