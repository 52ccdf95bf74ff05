"""Expression ingestion, label construction, gene selection, resampling,
and the tuple batch stream that drives training.

File formats:
  expression  CSV/TSV, header ``,geneA,geneB,...`` (first cell blank or
              "sample"), one row per sample: ``sample_id,1.2,0.0,...``
  labels      CSV with header ``sample_id,label`` (binary) or
              ``sample_id,ic50`` (binarized against the mean)
  gene list   plain text, one gene per line
  gene sets   one set per line: ``name<TAB>geneA,geneB,...``
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sp_special

from . import kernels


class ParseError(ValueError):
    """Malformed input file; message carries the 1-based line number."""


@dataclass
class ExpressionMatrix:
    """Samples x genes value grid with row and column identifiers."""

    sample_ids: list
    gene_names: list
    values: np.ndarray

    def __post_init__(self):
        self.sample_ids = list(self.sample_ids)
        self.gene_names = list(self.gene_names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.sample_ids), len(self.gene_names)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.gene_names)} genes"
            )
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("duplicate sample ids")
        if len(set(self.gene_names)) != len(self.gene_names):
            raise ValueError("duplicate gene names")

    @property
    def n_samples(self):
        return len(self.sample_ids)

    @property
    def n_genes(self):
        return len(self.gene_names)

    def subset_genes(self, genes):
        """Restrict to the named genes, in the given order."""
        col = {g: i for i, g in enumerate(self.gene_names)}
        missing = [g for g in genes if g not in col]
        if missing:
            raise ValueError(f"genes not present: {missing[:5]}")
        idx = [col[g] for g in genes]
        return ExpressionMatrix(self.sample_ids, list(genes), self.values[:, idx])

    def subset_samples(self, rows):
        rows = list(rows)
        return ExpressionMatrix(
            [self.sample_ids[i] for i in rows], self.gene_names, self.values[rows]
        )


@dataclass
class LabeledDomain:
    """One source domain: expression plus 1=sensitive / 0=resistant labels."""

    expr: ExpressionMatrix
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.labels.shape[0] != self.expr.n_samples:
            raise ValueError("label count does not match sample count")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")


@dataclass
class DomainBundle:
    """K labeled source domains plus one unlabeled target, gene-aligned."""

    sources: list
    target: ExpressionMatrix

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ValueError("need at least one source domain")
        genes = self.target.gene_names
        for k, dom in enumerate(self.sources):
            if dom.expr.gene_names != genes:
                raise ValueError(f"source {k} gene list differs from target")

    @property
    def n_sources(self):
        return len(self.sources)

    @property
    def gene_names(self):
        return self.target.gene_names


@dataclass
class GeneSelection:
    """A ranked/filtered gene subset. May be empty (e.g. DEG on identical
    groups); consumers that need model inputs must reject empty selections.
    """

    method: str
    genes: list
    params: dict = field(default_factory=dict)


@dataclass
class TupleBatch:
    """One mini-batch of aligned (source_1..K, labels_1..K, target) tuples."""

    x_sources: list  # K arrays (B, G)
    y_sources: list  # K arrays (B,)
    x_target: np.ndarray  # (B, G)

    @property
    def batch_size(self):
        return self.x_target.shape[0]


# ---------------------------------------------------------------------------
# file loading
# ---------------------------------------------------------------------------

_DELIMS = {"csv": ",", "tsv": "\t"}


def _parse_cell(text, line_num, what="value"):
    text = text.strip()
    if text == "":
        raise ParseError(f"line {line_num}: empty {what} cell")
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"line {line_num}: non-numeric {what} {text!r}") from None
    if not np.isfinite(v):
        raise ParseError(f"line {line_num}: non-finite {what} {text!r}")
    return v


def load_expression(path, fmt="csv"):
    """Parse an expression matrix file; see the module docstring for layout."""
    if fmt not in _DELIMS:
        raise ValueError(f"format must be one of {sorted(_DELIMS)}, got {fmt!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=_DELIMS[fmt])
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("line 1: empty file") from None
        if header[0].strip().lower() not in ("", "sample"):
            raise ParseError(
                f"line 1: first header cell must be blank or 'sample', got {header[0]!r}"
            )
        genes = [g.strip() for g in header[1:]]
        if not genes or any(g == "" for g in genes):
            raise ParseError("line 1: missing gene name in header")
        if len(set(genes)) != len(genes):
            raise ParseError("line 1: duplicate gene names in header")
        ids, rows, seen = [], [], set()
        for rec in reader:
            line = reader.line_num
            if not rec:
                continue
            if len(rec) != len(genes) + 1:
                raise ParseError(
                    f"line {line}: expected {len(genes) + 1} cells, got {len(rec)}"
                )
            sid = rec[0].strip()
            if sid == "":
                raise ParseError(f"line {line}: empty sample id")
            if sid in seen:
                raise ParseError(f"line {line}: duplicate sample id {sid!r}")
            seen.add(sid)
            ids.append(sid)
            rows.append([_parse_cell(c, line) for c in rec[1:]])
    if not ids:
        raise ParseError("line 2: no sample rows")
    return ExpressionMatrix(ids, genes, np.array(rows, dtype=np.float64))


def load_labels(path):
    """Parse a labels file; returns (sample_ids, values, kind in {label, ic50})."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise ParseError("line 1: empty file") from None
        if header == ["sample_id", "label"]:
            kind = "label"
        elif header == ["sample_id", "ic50"]:
            kind = "ic50"
        else:
            raise ParseError(
                "line 1: header must be 'sample_id,label' or 'sample_id,ic50'"
            )
        ids, vals, seen = [], [], set()
        for rec in reader:
            line = reader.line_num
            if not rec:
                continue
            if len(rec) != 2:
                raise ParseError(f"line {line}: expected 2 cells, got {len(rec)}")
            sid = rec[0].strip()
            if sid == "" or sid in seen:
                raise ParseError(f"line {line}: missing or duplicate sample id")
            seen.add(sid)
            v = _parse_cell(rec[1], line, what=kind)
            if kind == "label" and v not in (0.0, 1.0):
                raise ParseError(f"line {line}: label must be 0 or 1, got {rec[1]!r}")
            ids.append(sid)
            vals.append(v)
    if not ids:
        raise ParseError("line 2: no label rows")
    return ids, np.array(vals, dtype=np.float64), kind


def labels_for(expr, label_ids, label_values, kind):
    """Match a labels file to an expression matrix and return a LabeledDomain."""
    lookup = dict(zip(label_ids, np.asarray(label_values, dtype=np.float64)))
    missing = [s for s in expr.sample_ids if s not in lookup]
    if missing:
        raise ValueError(f"no label for samples: {missing[:5]}")
    vals = np.array([lookup[s] for s in expr.sample_ids])
    labels = binarize_ic50(vals) if kind == "ic50" else vals.astype(np.int64)
    return LabeledDomain(expr, labels)


def load_gene_list(path):
    with open(path) as fh:
        genes = [line.strip() for line in fh if line.strip()]
    if not genes:
        raise ParseError("gene list file is empty")
    return genes


def load_gene_sets(path):
    """One set per line: name TAB comma-separated genes."""
    sets = {}
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0].strip():
                raise ParseError(f"line {i}: expected 'name<TAB>gene,gene,...'")
            genes = [g.strip() for g in parts[1].split(",") if g.strip()]
            if not genes:
                raise ParseError(f"line {i}: gene set {parts[0]!r} is empty")
            if parts[0].strip() in sets:
                raise ParseError(f"line {i}: duplicate gene set name {parts[0]!r}")
            sets[parts[0].strip()] = genes
    if not sets:
        raise ParseError("gene set file is empty")
    return sets


# ---------------------------------------------------------------------------
# alignment, labels, gene selection
# ---------------------------------------------------------------------------

def align_genes(matrices):
    """Restrict all matrices to their common genes, ordered as in the first."""
    if len(matrices) < 2:
        raise ValueError("align_genes needs at least two matrices")
    common = set(matrices[0].gene_names)
    for m in matrices[1:]:
        common &= set(m.gene_names)
    if not common:
        raise ValueError("gene intersection is empty")
    ordered = [g for g in matrices[0].gene_names if g in common]
    return [m.subset_genes(ordered) for m in matrices]


def binarize_ic50(ic50):
    """1 = sensitive (strictly below the mean), 0 = resistant (at or above)."""
    v = np.asarray(ic50, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("binarize_ic50 needs at least two samples")
    if not np.isfinite(v).all():
        raise ValueError("binarize_ic50: non-finite values")
    return (v < v.mean()).astype(np.int64)


def select_hvg(expr, n, n_bins=20):
    """Top-n highly variable genes by binned normalized dispersion.

    Genes with non-positive mean or zero variance are excluded. Remaining
    genes are ranked by dispersion (variance/mean) z-scored within
    equal-frequency mean bins; bins too small for a z-score (or with zero
    spread) fall back to the global dispersion z-score. Ties break by gene
    name, so the result is a function of (values, n) only.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = expr.values
    means = x.mean(axis=0)
    var = x.var(axis=0, ddof=1) if x.shape[0] >= 2 else np.zeros(x.shape[1])
    # constant genes are detected exactly (roundoff can make their var > 0)
    spread = x.max(axis=0) > x.min(axis=0)
    eligible = np.flatnonzero((means > 0) & (var > 0) & spread)
    if eligible.size == 0:
        raise ValueError("no genes with positive mean and nonzero variance")
    disp = var[eligible] / means[eligible]
    z = np.empty(eligible.size)
    g_std = disp.std(ddof=1) if disp.size >= 2 else 0.0
    g_mean = disp.mean()
    order_by_mean = np.argsort(means[eligible], kind="stable")
    for bin_idx in np.array_split(order_by_mean, min(n_bins, eligible.size)):
        if bin_idx.size == 0:
            continue
        b_std = disp[bin_idx].std(ddof=1) if bin_idx.size >= 2 else 0.0
        if b_std > 0:
            z[bin_idx] = (disp[bin_idx] - disp[bin_idx].mean()) / b_std
        elif g_std > 0:
            z[bin_idx] = (disp[bin_idx] - g_mean) / g_std
        else:
            z[bin_idx] = 0.0
    ranked = sorted(
        range(eligible.size),
        key=lambda i: (-z[i], expr.gene_names[eligible[i]]),
    )
    top = ranked[: min(n, eligible.size)]
    return GeneSelection(
        method="hvg",
        genes=[expr.gene_names[eligible[i]] for i in top],
        params={"n": int(n), "n_bins": int(n_bins)},
    )


def _welch(a, b):
    """Welch two-sample t-test p-values per column; variance floored."""
    na, nb = a.shape[0], b.shape[0]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    va, vb = a.var(axis=0, ddof=1), b.var(axis=0, ddof=1)
    se2 = np.maximum(va / na + vb / nb, 1e-24)
    t = (ma - mb) / np.sqrt(se2)
    denom = (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
    df = np.where(denom > 0, se2**2 / np.maximum(denom, 1e-300), na + nb - 2)
    p = 2.0 * _sp_special.stdtr(df, -np.abs(t))
    return t, p


def select_deg(group_a, group_b, lfc_min=2.0, p_max=0.05):
    """Differentially expressed genes between two sample groups.

    Selects genes with |log2 fold change| strictly above ``lfc_min`` and a
    Welch t-test p-value strictly below ``p_max``. Both groups must cover
    the same gene panel and have at least two samples each.
    """
    if group_a.gene_names != group_b.gene_names:
        raise ValueError("groups must share an identical gene panel")
    if group_a.n_samples < 2 or group_b.n_samples < 2:
        raise ValueError("each group needs at least two samples")
    eps = 1e-9
    ma, mb = group_a.values.mean(axis=0), group_b.values.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lfc = np.log2((ma + eps) / (mb + eps))
    _, p = _welch(group_a.values, group_b.values)
    keep = np.isfinite(lfc) & (np.abs(lfc) > lfc_min) & (p < p_max)
    return GeneSelection(
        method="deg",
        genes=[group_a.gene_names[i] for i in np.flatnonzero(keep)],
        params={"lfc_min": float(lfc_min), "p_max": float(p_max)},
    )


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _class_indices(labels):
    idx0 = np.flatnonzero(labels == 0)
    idx1 = np.flatnonzero(labels == 1)
    return idx0, idx1


def weight_upsample(domain, out_n, seed=0):
    """Class-balanced resample with replacement.

    Exactly half the draws (ceil half to class 0 when odd) come from each
    class, uniformly within the class, so each individual draw lands on
    class c with probability ~1/2 and on a given member of class c with
    probability 1/(2*count(c)).
    """
    if out_n < 1:
        raise ValueError("out_n must be >= 1")
    idx0, idx1 = _class_indices(domain.labels)
    if idx0.size == 0 or idx1.size == 0:
        raise ValueError("weight_upsample needs both classes present")
    rng = np.random.default_rng(seed)
    n0 = out_n - out_n // 2
    classes = rng.permutation(np.concatenate([np.zeros(n0, np.int64),
                                              np.ones(out_n - n0, np.int64)]))
    u = rng.random(out_n)
    pool = np.where(classes == 0, idx0.size, idx1.size)
    within = (u * pool).astype(np.int64)
    rows = np.where(classes == 0, idx0[within % idx0.size], idx1[within % idx1.size])
    expr = ExpressionMatrix(
        [f"{domain.expr.sample_ids[r]}#r{i}" for i, r in enumerate(rows)],
        domain.expr.gene_names,
        domain.expr.values[rows],
    )
    return LabeledDomain(expr, domain.labels[rows])


@dataclass
class SmoteDraw:
    """Provenance of one synthetic sample: indices into the input domain."""

    parent: int
    neighbor: int
    lam: float


def smote_upsample_logged(domain, k=5, seed=0):
    """SMOTE oversampling with a synthesis log; see ``smote_upsample``."""
    idx0, idx1 = _class_indices(domain.labels)
    if idx0.size == 0 or idx1.size == 0:
        raise ValueError("smote_upsample needs both classes present")
    if idx0.size == idx1.size:
        return domain, []
    minority, majority = (idx0, idx1) if idx0.size < idx1.size else (idx1, idx0)
    minority_label = int(domain.labels[minority[0]])
    if minority.size < 2:
        raise ValueError(
            "minority class has a single sample; SMOTE cannot interpolate "
            "(use weight_upsample instead)"
        )
    k_eff = min(int(k), minority.size - 1)
    if k_eff < 1:
        raise ValueError("k must be >= 1")
    x_min = np.ascontiguousarray(domain.expr.values[minority])
    dists = kernels.pairwise_sq_dists(x_min, x_min)
    # stable argsort: nearest first, index order on ties; col 0 is self
    neighbor_tbl = np.argsort(dists, axis=1, kind="stable")[:, 1 : k_eff + 1]
    rng = np.random.default_rng(seed)
    needed = majority.size - minority.size
    new_rows, log = [], []
    for _ in range(needed):
        j = int(rng.integers(minority.size))
        nb = int(neighbor_tbl[j, int(rng.integers(k_eff))])
        lam = float(rng.random())
        new_rows.append(x_min[j] + lam * (x_min[nb] - x_min[j]))
        log.append(SmoteDraw(int(minority[j]), int(minority[nb]), lam))
    expr = ExpressionMatrix(
        domain.expr.sample_ids + [f"smote{i}" for i in range(needed)],
        domain.expr.gene_names,
        np.vstack([domain.expr.values, np.array(new_rows)]),
    )
    labels = np.concatenate([domain.labels, np.full(needed, minority_label, np.int64)])
    return LabeledDomain(expr, labels), log


def smote_upsample(domain, k=5, seed=0):
    """Balance classes by interpolating minority samples toward their
    k nearest minority neighbors (Euclidean); synthetic = x + lam*(x' - x),
    lam ~ U(0,1). Already-balanced input is returned unchanged.
    """
    out, _ = smote_upsample_logged(domain, k=k, seed=seed)
    return out


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _index_stream(n, n_draws, rng):
    """n_draws indices: fresh shuffles of range(n), reshuffled when exhausted."""
    chunks = []
    drawn = 0
    while drawn < n_draws:
        chunks.append(rng.permutation(n))
        drawn += n
    return np.concatenate(chunks)[:n_draws]


def assemble_batches(bundle, batch_size, seed=0, epoch=0):
    """One epoch of tuple batches.

    Epoch length is ceil(largest domain size / B); every domain (sources and
    target) is shuffled independently and cycled through repeated shuffles
    when exhausted, and tuple i pairs the i-th draw of each stream. Fully
    deterministic given (seed, epoch).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    sizes = [d.expr.n_samples for d in bundle.sources] + [bundle.target.n_samples]
    if min(sizes) == 0:
        raise ValueError("all domains must be non-empty")
    n_batches = -(-max(sizes) // batch_size)
    n_draws = n_batches * batch_size
    streams = []
    for s, size in enumerate(sizes):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(epoch), s)))
        streams.append(_index_stream(size, n_draws, rng))
    batches = []
    for b in range(n_batches):
        sl = slice(b * batch_size, (b + 1) * batch_size)
        xs = [d.expr.values[streams[k][sl]] for k, d in enumerate(bundle.sources)]
        ys = [d.labels[streams[k][sl]] for k, d in enumerate(bundle.sources)]
        xt = bundle.target.values[streams[-1][sl]]
        batches.append(TupleBatch(xs, ys, xt))
    return batches


# ---------------------------------------------------------------------------
# pathway activity
# ---------------------------------------------------------------------------

def pathway_activity(expr, gene_sets):
    """Per-sample pathway activities: mean z-score of member genes.

    Gene z-scores use the population std across samples (constant genes get
    z = 0). Sets with no genes in ``expr`` are dropped with a warning.
    """
    mu = expr.values.mean(axis=0)
    sd = expr.values.std(axis=0)
    z = np.where(sd > 0, (expr.values - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    col = {g: i for i, g in enumerate(expr.gene_names)}
    names, cols = [], []
    for name, genes in gene_sets.items():
        idx = [col[g] for g in genes if g in col]
        if not idx:
            warnings.warn(f"gene set {name!r} shares no genes with the matrix; dropped")
            continue
        names.append(name)
        cols.append(z[:, idx].mean(axis=1))
    if not names:
        raise ValueError("no gene set overlaps the expression matrix")
    return ExpressionMatrix(expr.sample_ids, names, np.column_stack(cols))
