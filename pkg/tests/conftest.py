from delegsim.identity import KeyRegistry
from delegsim.ledger import Accounts
from delegsim.monitoring import AttestationSummary, MonitoringRegistry, attest, self_report
from delegsim.tasks import TaskCharacteristics, TaskNode
from delegsim.tokens import Caveat, CaveatKind, Operation, PermissionAuthority

SECRET = b"root-secret"


def characteristics(**kwargs):
    values = dict(
        complexity=0.5,
        criticality=0.5,
        uncertainty=0.5,
        verifiability=0.8,
        reversibility=0.5,
        contextuality=0.2,
        subjectivity=0.1,
        duration_est=20,
        cost_est=1_000_000,
    )
    values.update(kwargs)
    return TaskCharacteristics(**values)


def leaf(task_id="t1", **kwargs):
    return TaskNode(task_id, characteristics(**kwargs))


def registry(*labels):
    reg = KeyRegistry()
    ids = [reg.create(label).id for label in labels]
    return reg, ids


def authority():
    auth = PermissionAuthority()
    auth.add_root("root", SECRET)
    return auth


def project_x_caveats():
    return [
        Caveat(CaveatKind.RESOURCE_SCOPE, frozenset({"/Project_X"})),
        Caveat(CaveatKind.OPERATIONS, frozenset({Operation.READ})),
    ]


def funded(**balances):
    accounts = Accounts()
    for account, amount in balances.items():
        accounts.open(account, amount, 0)
    return accounts


def attestation_chain(*labels, quality=0.87):
    """Honest chain in which each agent attests the next one's subtask."""

    reg, ids = registry(*labels)
    relationships = MonitoringRegistry()
    reports = []
    subtask = "root"
    children = {}
    for attester, subject in zip(ids, ids[1:]):
        child = f"{subtask}.1"
        children[subtask] = {child}
        summary = AttestationSummary(True, quality, 5)
        envelope = self_report(reg, subject, child, summary)
        relationships.bind(attester, subject, child)
        reports.append(attest(reg, attester, subject, child, summary, summary, envelope, subtask))
        subtask = child
    return reg, ids, relationships, reports, children
