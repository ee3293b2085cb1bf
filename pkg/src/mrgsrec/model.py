"""Full parameter set and the forward passes shared by training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .embeddings import (EmbeddingTables, SequenceBatch, embed_sequence,
                         init_tables, load_arrays, save_arrays)
from .errors import ParseError
from .fusion import FusionParams, fuse, init_fusion_params, score_items
from .graph import NormalizedAdjacency, gather_batch, propagated_embeddings
from .seqenc import SeqEncoderConfig, SeqEncoderParams, init_seq_params, seq_encode


@dataclass
class ModelParams:
    """Every learnable tensor: embedding tables, encoder stack, fusion block."""

    tables: EmbeddingTables
    encoder: SeqEncoderParams
    fusion: FusionParams
    seq_config: SeqEncoderConfig

    def named(self) -> dict[str, ad.Tensor]:
        out = {
            "tables.user": self.tables.user,
            "tables.item": self.tables.item,
            "tables.positional": self.tables.positional,
        }
        out.update(self.encoder.named())
        out.update(self.fusion.named())
        return out

    def parameters(self) -> list[ad.Tensor]:
        return list(self.named().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        clone = init_model_like(self)
        for name, tensor in clone.named().items():
            tensor.data[...] = self.named()[name].data
        return clone


def init_model(n_users: int, n_items: int, c: int,
               seq_config: SeqEncoderConfig, seed: int) -> ModelParams:
    """Seeded initialization of all parameter blocks."""
    tables = init_tables(n_users, n_items, c, seq_config.d, seed)
    encoder = init_seq_params(seq_config, seed + 1)
    fusion = init_fusion_params(seq_config.d, seed + 2)
    return ModelParams(tables, encoder, fusion, seq_config)


def init_model_like(params: ModelParams) -> ModelParams:
    t = params.tables
    return init_model(t.n_users, t.n_items, t.c, params.seq_config, seed=0)


@dataclass
class ForwardStates:
    """Per-batch encoder outputs; entries are None when a path was skipped."""

    e_l: ad.Tensor | None = None
    E_l: ad.Tensor | None = None
    e_g: ad.Tensor | None = None
    E_g: ad.Tensor | None = None
    e_f: ad.Tensor | None = None
    node_embeddings: ad.Tensor | None = None
    initial_nodes: ad.Tensor | None = None


def forward_states(params: ModelParams, batch: SequenceBatch,
                   adjacency: NormalizedAdjacency | None, k: int,
                   need_seq: bool = True, need_graph: bool = True,
                   need_fused: bool = True, layer_mean: bool = False,
                   train_mode: bool = False,
                   rng: np.random.Generator | None = None) -> ForwardStates:
    """Run the requested encoder paths for one batch.

    The graph path re-propagates from the current tables so gradients reach
    them; ``initial_nodes`` exposes the layer-0 matrix for regularization.
    """
    states = ForwardStates()
    if need_seq or need_fused:
        e_u, E_u = embed_sequence(batch, params.tables)
        states.e_l, states.E_l = seq_encode(
            e_u, E_u, params.encoder, params.seq_config,
            batch.valid_lengths, train_mode=train_mode, rng=rng)
    if need_graph or need_fused:
        if adjacency is None:
            raise ValueError("graph path requested without an adjacency")
        states.initial_nodes = ad.concat(
            [params.tables.user, params.tables.item_rows()], axis=0)
        states.node_embeddings = propagated_embeddings(
            params.tables, adjacency, k, layer_mean=layer_mean,
            initial=states.initial_nodes)
        states.e_g, states.E_g = gather_batch(
            states.node_embeddings, batch,
            params.tables.n_users, params.tables.n_items)
    if need_fused:
        states.e_f = fuse(states.e_l, states.e_g, params.fusion)
    return states


def score_batch(params: ModelParams, states: ForwardStates, head: str) -> ad.Tensor:
    """(B, N) full-catalog scores from the selected head embedding."""
    chosen = {"fused": states.e_f, "sequential": states.e_l,
              "graph": states.e_g}.get(head)
    if chosen is None:
        raise ValueError(f"scoring head {head!r} unavailable or unknown")
    return score_items(chosen, params.tables.item_rows())


def save_checkpoint(path, params: ModelParams, meta: dict) -> None:
    """Persist all parameter blocks plus the hyper-parameter header."""
    arrays = {name: t.data for name, t in params.named().items()}
    cfg = params.seq_config
    meta = dict(meta)
    meta["model"] = {
        "n_users": params.tables.n_users,
        "n_items": params.tables.n_items,
        "c": params.tables.c,
        "d": cfg.d,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "d_ff": cfg.d_ff,
        "dropout_rate": cfg.dropout_rate,
        "attention_mode": cfg.attention_mode,
        "user_state": cfg.user_state,
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    arrays, meta = load_arrays(path)
    spec = meta.get("model")
    if spec is None:
        raise ParseError(f"{path}: checkpoint lacks a model header")
    cfg = SeqEncoderConfig(
        d=spec["d"], n_layers=spec["n_layers"], n_heads=spec["n_heads"],
        d_ff=spec["d_ff"], dropout_rate=spec["dropout_rate"],
        attention_mode=spec["attention_mode"], user_state=spec["user_state"])
    params = init_model(spec["n_users"], spec["n_items"], spec["c"], cfg, seed=0)
    named = params.named()
    for name, values in arrays.items():
        if name not in named:
            raise ParseError(f"{path}: unexpected parameter block {name!r}")
        named[name].data[...] = values
    return params, meta
