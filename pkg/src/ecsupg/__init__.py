"""Energy-conserving compatible finite element solver with SUPG thermal transport."""
