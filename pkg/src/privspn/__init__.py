"""Private training and inference of sum-product network forests over Shamir shares."""

__version__ = "0.1.0"
