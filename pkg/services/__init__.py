from .attester import Attester, Verdict, Violation, committee_decide
from .audit import Auditor, OutcomeTracker
from .beacon import BeaconChain, Crosslink, SubmitResult
from .byzantine import BEHAVIORS, EXPECTED_CHECK, ByzantineProposer, make_proposer
from .ledger import (
    AmountOverflowError,
    CreditTx,
    DebitTx,
    Endpoint,
    ProofError,
    ShardState,
    StructuralError,
    ToCreditEvent,
    netted_transfer,
    real_balance,
)
from .merkle import MerkleProof, MerkleTree, build_root, prove, verify
from .proposer import Block, BlockProposer, Proposal, ProposerRules
from .scenario import ScenarioError, gen_scenario, load_scenario, parse_scenario
from .simulator import World, run, verify_trace
from .state_provider import RemoteStateView, StateProvider

__all__ = [
    "AmountOverflowError",
    "Attester",
    "Auditor",
    "BEHAVIORS",
    "BeaconChain",
    "Block",
    "BlockProposer",
    "ByzantineProposer",
    "CreditTx",
    "Crosslink",
    "DebitTx",
    "EXPECTED_CHECK",
    "Endpoint",
    "MerkleProof",
    "MerkleTree",
    "OutcomeTracker",
    "ProofError",
    "Proposal",
    "ProposerRules",
    "RemoteStateView",
    "ScenarioError",
    "ShardState",
    "StateProvider",
    "StructuralError",
    "SubmitResult",
    "ToCreditEvent",
    "Verdict",
    "Violation",
    "World",
    "build_root",
    "committee_decide",
    "gen_scenario",
    "load_scenario",
    "make_proposer",
    "netted_transfer",
    "parse_scenario",
    "prove",
    "real_balance",
    "run",
    "verify",
    "verify_trace",
]
