"""Network engine: validated differentiable ops, declarative layer specs, Adam."""
