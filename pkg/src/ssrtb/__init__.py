"""Desk-scale real-time bidding lab for sponsored search: auction simulator,
hour-aggregated MDP, numpy DQN bidder, multi-agent training and experiment harness."""

__version__ = "0.1.0"
