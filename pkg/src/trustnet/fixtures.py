"""Deterministic generators for desk-scale synthetic datasets.

The social generators plant community structure: users and objects belong
to latent communities, interactions mostly stay inside a community, and
trust edges concentrate on a social subset with distinct "activity"
(outgoing) and "authority" (incoming) propensities, which makes the two
roles genuinely asymmetric. A tunable fraction of trust edges is pure
cross-community noise and caps attainable prediction accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embed import KnowledgeTriple
from .errors import DataError
from .graph import HeteroGraph, Role, TrustSample, build_view
from .ppr import topk_augment
from .train import PipelineFixture

RATING_LEVELS = np.arange(0.5, 4.01, 0.5)


@dataclass(frozen=True)
class CommunityPlan:
    """Planted structure behind a synthetic social graph.

    Users carry two independent community labels: a social community that
    drives trust formation and a consumption community that drives
    interactions. Each social user also has a role mix (follower vs
    authority), so outgoing and incoming trust propensities differ.
    """

    social_comm: np.ndarray
    consume_comm: np.ndarray
    obj_comm: np.ndarray
    social: np.ndarray
    out_weight: np.ndarray
    in_weight: np.ndarray


def _plan_communities(
    rng: np.random.Generator,
    num_users: int,
    num_objects: int,
    communities: int,
    social_fraction: float,
    role_split: float = 0.4,
    comm_overlap: float = 0.0,
    out_flatness: float = 1.6,
    in_flatness: float = 2.2,
    role_floor: float = 0.08,
) -> CommunityPlan:
    weights = (np.arange(communities) + 1.0) ** -0.8
    weights /= weights.sum()
    social_comm = rng.choice(communities, size=num_users, p=weights)
    consume_comm = np.where(
        rng.random(num_users) < comm_overlap,
        social_comm,
        rng.choice(communities, size=num_users, p=weights),
    )
    obj_comm = rng.choice(communities, size=num_objects, p=weights)
    social = rng.random(num_users) < social_fraction
    # ensure trust can form inside every social community
    for c in range(communities):
        members = np.flatnonzero(social_comm == c)
        if members.size >= 4 and social[members].sum() < 4:
            social[rng.choice(members, size=4, replace=False)] = True
    # bimodal role mix: ~1 are followers (emit trust), ~0 are authorities
    # (receive trust); the middle keeps multi-hop chains alive
    role = rng.beta(role_split, role_split, size=num_users)
    out_weight = np.where(
        social, (role_floor + role) * (1.0 + rng.pareto(out_flatness, size=num_users)), 0.0
    )
    in_weight = np.where(
        social, (role_floor + (1.0 - role)) * (1.0 + rng.pareto(in_flatness, size=num_users)), 0.0
    )
    return CommunityPlan(social_comm, consume_comm, obj_comm, social, out_weight, in_weight)


def _sample_trust_edges(
    rng: np.random.Generator,
    plan: CommunityPlan,
    num_users: int,
    num_trust: int,
    cross_noise: float,
    communities: int,
    chain_fraction: float = 0.0,
) -> list[tuple[int, int]]:
    """Role-weighted within-community edges plus propagated closures.

    A ``chain_fraction`` share of the budget closes existing two-hop
    chains (u trusts a, a trusts v, therefore u comes to trust v), the
    propagation pattern multi-hop augmentation is meant to recover.
    """
    comm_social: list[np.ndarray] = []
    comm_mass = np.zeros(communities)
    for c in range(communities):
        members = np.flatnonzero((plan.social_comm == c) & plan.social)
        comm_social.append(members)
        comm_mass[c] = plan.out_weight[members].sum()
    comm_p = comm_mass / comm_mass.sum()

    base_target = num_trust - int(round(chain_fraction * num_trust))
    edges: set[tuple[int, int]] = set()
    attempts = 0
    cap = 200 * num_trust
    while len(edges) < base_target and attempts < cap:
        attempts += 1
        c = int(rng.choice(communities, p=comm_p))
        members = comm_social[c]
        if members.size < 2:
            continue
        out_w = plan.out_weight[members]
        u = int(rng.choice(members, p=out_w / out_w.sum()))
        if rng.random() < cross_noise:
            v = int(rng.integers(num_users))
        else:
            in_w = plan.in_weight[members]
            v = int(rng.choice(members, p=in_w / in_w.sum()))
        if u != v:
            edges.add((u, v))
    if len(edges) < base_target:
        raise DataError("trust sampling failed to reach the requested edge count")

    edge_list = sorted(edges)
    out_adj: dict[int, list[int]] = {}
    for x, v in edge_list:
        out_adj.setdefault(x, []).append(v)
    attempts = 0
    while len(edges) < num_trust and attempts < cap:
        attempts += 1
        u, node = edge_list[int(rng.integers(len(edge_list)))]
        # walk up to four further hops before closing; the deep closures
        # sit beyond what stacked two-layer views can reach without
        # explicit multi-hop augmentation
        extra = 1 + int(rng.integers(4))
        for _ in range(extra):
            hops = out_adj.get(node)
            if not hops:
                break
            node = hops[int(rng.integers(len(hops)))]
        if node != u and (u, node) not in edges:
            edges.add((u, node))
            edge_list.append((u, node))
            out_adj.setdefault(u, []).append(node)
    attempts = 0
    while len(edges) < num_trust and attempts < cap:
        # chain closure saturated; top up with ordinary pairs
        attempts += 1
        c = int(rng.choice(communities, p=comm_p))
        members = comm_social[c]
        if members.size < 2:
            continue
        out_w = plan.out_weight[members]
        in_w = plan.in_weight[members]
        u = int(rng.choice(members, p=out_w / out_w.sum()))
        v = int(rng.choice(members, p=in_w / in_w.sum()))
        if u != v:
            edges.add((u, v))
    if len(edges) < num_trust:
        raise DataError("trust sampling failed to reach the requested edge count")
    return sorted(edges)


def _sample_interactions(
    rng: np.random.Generator,
    plan: CommunityPlan,
    num_users: int,
    num_objects: int,
    mean_per_user: float,
    same_community_rate: float,
    communities: int,
) -> list[tuple[int, int]]:
    popularity = 1.0 + rng.pareto(1.5, size=num_objects)
    comm_objects = [np.flatnonzero(plan.obj_comm == c) for c in range(communities)]
    pairs: set[tuple[int, int]] = set()
    for u in range(num_users):
        count = 1 + rng.poisson(max(mean_per_user - 1.0, 0.0))
        own = comm_objects[plan.consume_comm[u]]
        for _ in range(count):
            if own.size > 0 and rng.random() < same_community_rate:
                pool = own
            else:
                pool = None
            if pool is None:
                p = popularity / popularity.sum()
                o = int(rng.choice(num_objects, p=p))
            else:
                p = popularity[pool] / popularity[pool].sum()
                o = int(rng.choice(pool, p=p))
            pairs.add((u, o))
    # every object shows up at least once so loaders see the full roster
    rated = {o for _, o in pairs}
    for o in range(num_objects):
        if o not in rated:
            pairs.add((int(rng.integers(num_users)), o))
    return sorted(pairs)


def make_filmtrust_files(
    out_dir,
    seed: int = 0,
    num_users: int = 1508,
    num_objects: int = 2071,
    num_trust: int = 1853,
    communities: int = 12,
    social_fraction: float = 0.42,
    cross_noise: float = 0.30,
    mean_interactions: float = 8.0,
    same_community_rate: float = 0.85,
    role_split: float = 0.4,
    comm_overlap: float = 0.0,
    out_flatness: float = 1.6,
    in_flatness: float = 2.2,
    role_floor: float = 0.08,
    chain_fraction: float = 0.0,
) -> tuple[Path, Path]:
    """Write ratings.txt / trust.txt in the whitespace-separated format.

    Default sizes mirror the public film-review benchmark (1508 users,
    2071 objects, 1853 trust edges). External ids are shuffled 1-based
    integers so loaders must remap.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    plan = _plan_communities(
        rng, num_users, num_objects, communities, social_fraction, role_split, comm_overlap,
        out_flatness, in_flatness, role_floor,
    )
    trust = _sample_trust_edges(
        rng, plan, num_users, num_trust, cross_noise, communities, chain_fraction
    )
    interactions = _sample_interactions(
        rng, plan, num_users, num_objects, mean_interactions, same_community_rate, communities
    )

    ext_user = rng.permutation(num_users) + 1
    ext_obj = rng.permutation(num_objects) + 1

    ratings_path = out_dir / "ratings.txt"
    trust_path = out_dir / "trust.txt"
    lines = []
    for u, o in interactions:
        rating = RATING_LEVELS[rng.integers(len(RATING_LEVELS))]
        lines.append(f"{ext_user[u]} {ext_obj[o]} {rating}")
    rng.shuffle(lines)
    ratings_path.write_text("\n".join(lines) + "\n")
    tlines = [f"{ext_user[a]} {ext_user[b]} 1" for a, b in trust]
    rng.shuffle(tlines)
    trust_path.write_text("\n".join(tlines) + "\n")
    return ratings_path, trust_path


_COMMENT_SHARED = [f"word{i}" for i in range(40)]


def _comment_text(rng: np.random.Generator, community: int, community_share: float) -> str:
    length = int(rng.integers(4, 9))
    toks = []
    for _ in range(length):
        if rng.random() < community_share:
            toks.append(f"c{community}tok{int(rng.integers(25))}")
        else:
            toks.append(_COMMENT_SHARED[int(rng.integers(len(_COMMENT_SHARED)))])
    return " ".join(toks)


def make_siot_files(
    out_dir,
    seed: int = 0,
    num_users: int = 300,
    num_objects: int = 220,
    communities: int = 6,
    niches_per_community: int = 4,
    num_trust: int = 800,
    social_fraction: float = 0.8,
    cross_noise: float = 0.25,
    mean_comments: float = 22.0,
    below_threshold_fraction: float = 0.08,
    same_niche_rate: float = 0.9,
    niche_share: float = 0.3,
    kg_noise: float = 0.08,
    unaligned_fraction: float = 0.08,
    role_split: float = 0.35,
    comm_overlap: float = 0.95,
    out_flatness: float = 1.6,
    in_flatness: float = 3.0,
    role_floor: float = 0.05,
    chain_fraction: float = 0.45,
) -> Path:
    """Write a CSV bundle: trust.csv, interactions.csv, objects.csv, triples.csv.

    Consumption happens in narrow niches (``niches_per_community`` per
    trust community): a user overwhelmingly rates objects of one niche,
    and comment tokens also lean on the niche vocabulary. Trust forms at
    the community level, so co-consumption alone cannot relate users of
    sibling niches; the triple file links every object entity to its
    community-level category (and a community brand), which is the only
    bridge across niches. A ``kg_noise`` fraction of triples points at a
    wrong category. A small user fraction gets too few comments and is
    dropped by the loader's comment-count threshold, exercising the
    filter.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    plan = _plan_communities(
        rng, num_users, num_objects, communities, social_fraction, role_split, comm_overlap,
        out_flatness, in_flatness, role_floor,
    )
    trust = _sample_trust_edges(
        rng, plan, num_users, num_trust, cross_noise, communities, chain_fraction
    )

    # niches partition each community's object pool; users consume inside
    # one niche of their (consumption) community
    num_niches = communities * niches_per_community
    obj_niche = plan.obj_comm * niches_per_community + rng.integers(
        niches_per_community, size=num_objects
    )
    user_niche = plan.consume_comm * niches_per_community + rng.integers(
        niches_per_community, size=num_users
    )
    popularity = 1.0 + rng.pareto(1.5, size=num_objects)
    niche_objects = [np.flatnonzero(obj_niche == nn) for nn in range(num_niches)]

    inter_rows: list[tuple[str, str, str]] = []
    for u in range(num_users):
        if rng.random() < below_threshold_fraction:
            count = int(rng.integers(3, 16))  # at most 15 -> filtered out
        else:
            count = int(rng.integers(17, max(18, int(2 * mean_comments - 17))))
        own = niche_objects[user_niche[u]]
        for _ in range(count):
            if own.size > 0 and rng.random() < same_niche_rate:
                pool = own
                p = popularity[pool] / popularity[pool].sum()
                o = int(rng.choice(pool, p=p))
            else:
                o = int(rng.choice(num_objects, p=popularity / popularity.sum()))
            inter_rows.append(
                (f"u{u}", f"o{o}", _comment_text(rng, int(user_niche[u]), niche_share))
            )

    entity_names = [f"ent_obj_{o}" for o in range(num_objects)]
    aligned = rng.random(num_objects) >= unaligned_fraction

    triples: list[tuple[str, str, str]] = []
    brands_per_comm = 2
    for o in range(num_objects):
        c = plan.obj_comm[o]
        cat = c if rng.random() >= kg_noise else int(rng.integers(communities))
        triples.append((entity_names[o], "category", f"cat_{cat}"))
        brand_comm = c if rng.random() >= kg_noise else int(rng.integers(communities))
        brand = int(rng.integers(brands_per_comm))
        triples.append((entity_names[o], "brand", f"brand_{brand_comm}_{brand}"))

    (out_dir / "trust.csv").write_text(
        "trustor,trustee\n" + "".join(f"u{a},u{b}\n" for a, b in trust)
    )
    (out_dir / "interactions.csv").write_text(
        "user,object,comment\n" + "".join(f"{u},{o},{c}\n" for u, o, c in inter_rows)
    )
    (out_dir / "objects.csv").write_text(
        "object,entity_name\n"
        + "".join(
            f"o{o},{entity_names[o] if aligned[o] else ''}\n" for o in range(num_objects)
        )
    )
    (out_dir / "triples.csv").write_text(
        "head_entity,relation,tail_entity\n" + "".join(f"{h},{r},{t}\n" for h, r, t in triples)
    )
    return out_dir


def make_satisfiable_kg(
    num_relations: int = 3,
    pairs_per_relation: int = 40,
    dim: int = 8,
    seed: int = 0,
    relation_norm: float = 0.8,
) -> tuple[list[KnowledgeTriple], int, int]:
    """A triple set solvable exactly under unit-norm entity constraints.

    For each relation vector r, head entities are sampled on the sphere
    slice {x : |x| = 1, x . r = -|r|^2 / 2}, so t = h + r is unit-norm as
    well: a witness embedding exists with every score exactly zero.
    """
    if dim < 2:
        raise DataError("satisfiable construction needs dim >= 2")
    rng = np.random.default_rng(seed)
    triples: list[KnowledgeTriple] = []
    entities = 0
    for rel in range(num_relations):
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        rho = relation_norm
        for _ in range(pairs_per_relation):
            raw = rng.normal(size=dim)
            raw -= (raw @ direction) * direction
            raw /= np.linalg.norm(raw)
            head = -0.5 * rho * direction + np.sqrt(1.0 - 0.25 * rho * rho) * raw
            # tail = head + rho * direction; both are unit vectors by design
            h_id, t_id = entities, entities + 1
            entities += 2
            triples.append(KnowledgeTriple(h_id, rel, t_id))
    return triples, entities, num_relations


def make_pipeline_fixture(
    seed: int = 0,
    num_users: int = 5,
    num_objects: int = 3,
    user_dim: int = 4,
    object_dim: int = 4,
    ppr_k: int = 2,
) -> PipelineFixture:
    """A hand-sized graph with both role views, tables, and samples."""
    rng = np.random.default_rng(seed)
    trust = [(0, 1), (1, 2), (2, 0), (3, 1), (0, 4)]
    trust = [e for e in trust if e[0] < num_users and e[1] < num_users]
    inter = []
    for u in range(num_users):
        o = num_users + int(rng.integers(num_objects))
        inter.append((u, o))
    inter = sorted(set(inter))
    graph = HeteroGraph(
        num_users=num_users,
        num_objects=num_objects,
        trust_edges=trust,
        interaction_edges=inter,
        object_edges=[(num_users, num_users + 1)] if num_objects >= 2 else [],
    )
    augmented = topk_augment(graph, k=ppr_k, epsilon=1e-8)
    views = {
        Role.TRUSTOR: build_view(graph, augmented, Role.TRUSTOR),
        Role.TRUSTEE: build_view(graph, augmented, Role.TRUSTEE),
    }
    h0_users = rng.normal(size=(num_users, user_dim))
    h0_objects = rng.normal(size=(num_objects, object_dim))
    samples = [
        TrustSample(0, 1, 1),
        TrustSample(1, 2, 1),
        TrustSample(2, 1, 0),
        TrustSample(3, 4, 0),
        TrustSample(0, 3, 0),
        TrustSample(3, 1, 1),
    ]
    samples = [s for s in samples if s.trustor < num_users and s.trustee < num_users]
    return PipelineFixture(
        graph=graph,
        views=views,
        h0_users=h0_users,
        h0_objects=h0_objects,
        samples=samples,
    )
