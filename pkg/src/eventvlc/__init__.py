"""Event-camera visible light communication and ranging: simulator, receiver and experiment harness."""
from .channel import CameraModel, EventNoiseParams, LedBarLayout, Trajectory, simulate_events
from .experiment import ExperimentConfig, run_trial, sweep
from .pipeline import ReceiverParams, receive
from .transmitter import TxConfig, build_session

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "EventNoiseParams", "LedBarLayout", "Trajectory", "simulate_events",
    "ExperimentConfig", "run_trial", "sweep", "ReceiverParams", "receive", "TxConfig", "build_session",
]
