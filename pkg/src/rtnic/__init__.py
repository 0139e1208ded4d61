"""Discrete-event model of a priority-aware multiqueue NIC feeding a
single-core fixed-priority RTOS."""

from rtnic.sim import Event, EventKind, EventQueue
from rtnic.nic import (
    Action,
    DistributionMap,
    FlowRule,
    InterruptBatch,
    Nic,
    Packet,
    QueueConfig,
    RxQueue,
)
from rtnic.rtos import CostModel, Cpu, Job, TaskDescriptor

__all__ = [
    "Action",
    "CostModel",
    "Cpu",
    "DistributionMap",
    "Event",
    "EventKind",
    "EventQueue",
    "FlowRule",
    "InterruptBatch",
    "Job",
    "Nic",
    "Packet",
    "QueueConfig",
    "RxQueue",
    "TaskDescriptor",
]
