"""Constructive calculus on ReLU networks.

Every operation here builds explicit weight matrices so that the realization
of the result equals the stated combination of the input realizations
exactly, not approximately.  Alongside each construction we keep the
conservative parameter-count bound it satisfies; callers (and the test
suite) assert those bounds as hard integer inequalities.

Conventions used throughout:

* an input value y is carried through hidden ReLU layers as the pair
  (relu(y), relu(-y)), recovered by the affine map [I, -I];
* compositions insert that carrier pair at the seam, which is why composing
  nets of depths L1 and L2 yields depth L1+L2 and at most twice the summed
  size;
* linear combinations and parallelizations stack first layers and
  block-diagonalize the rest.
"""

import math

import numpy as np
from scipy.linalg import block_diag

from .network import Layer, Network, NetworkShapeError, fold_affine

__all__ = [
    "arch_signature",
    "identity_net",
    "extend_depth",
    "widen_layer",
    "compose",
    "combine",
    "parallel_shared",
    "add_compose",
    "add_compose_bound",
    "psi_max_net",
    "max_tree",
    "min_tree",
    "max_tree_bound",
    "pad_to_pow2",
    "square_unit_net",
    "weighted_square_net",
    "weighted_square_bound",
    "SQUARE_SIZE_COEFF",
]


def arch_signature(net):
    """Two networks are interchangeable in the calculus iff this matches."""
    return net.dims


def _require_same_arch(nets, what):
    sig = arch_signature(nets[0])
    for n in nets[1:]:
        if arch_signature(n) != sig:
            raise NetworkShapeError(
                "%s requires identical architectures: %s vs %s"
                % (what, sig, arch_signature(n))
            )


def identity_net(d, L):
    """Network of depth L realizing the identity on R^d.

    Depth 1 is the affine identity ((I, 0)).  For depth >= 2 the input is
    split into its positive and negative parts (width 2d), carried through
    L-2 inner layers unchanged, and recombined by [I, -I] at the output.
    Sizes: d^2+d at depth 1 and 4d^2+3d at depth 2.
    """
    if d < 1 or L < 1:
        raise ValueError("identity_net needs d >= 1 and L >= 1")
    eye = np.eye(d)
    if L == 1:
        return Network([Layer(eye, np.zeros(d))])
    split = np.vstack([eye, -eye])
    layers = [Layer(split, np.zeros(2 * d))]
    for _ in range(L - 2):
        layers.append(Layer(np.eye(2 * d), np.zeros(2 * d)))
    layers.append(Layer(np.hstack([eye, -eye]), np.zeros(d)))
    return Network(layers)


def compose(outer, inner):
    """Network realizing outer(inner(x)); depth L1+L2, size <= 2(C1+C2)."""
    if outer.dim_in != inner.dim_out:
        raise NetworkShapeError(
            "compose: outer expects %d inputs, inner produces %d"
            % (outer.dim_in, inner.dim_out)
        )
    w_last, b_last = inner.layers[-1].weight, inner.layers[-1].bias
    w_first, b_first = outer.layers[0].weight, outer.layers[0].bias
    seam_in = Layer(np.vstack([w_last, -w_last]), np.concatenate([b_last, -b_last]))
    seam_out = Layer(np.hstack([w_first, -w_first]), b_first)
    return Network(list(inner.layers[:-1]) + [seam_in, seam_out] + list(outer.layers[1:]))


def extend_depth(net, L):
    """Same realization at depth L > depth(net).

    Implemented as composition with an identity network of the missing
    depth, so size <= 2(C(identity_net(dim_out, L-L0)) + C(net)).
    """
    if L <= net.depth:
        raise ValueError("extend_depth: target depth %d <= current %d" % (L, net.depth))
    return compose(identity_net(net.dim_out, L - net.depth), net)


def widen_layer(net, l):
    """Zero-pad hidden layer l (1-based) by one unit; realization unchanged."""
    if not 1 <= l <= net.depth - 1:
        raise ValueError("widen_layer: l must be a hidden layer index")
    layers = list(net.layers)
    cur = layers[l - 1]
    layers[l - 1] = Layer(
        np.vstack([cur.weight, np.zeros((1, cur.fan_in))]),
        np.concatenate([cur.bias, [0.0]]),
    )
    nxt = layers[l]
    layers[l] = Layer(np.hstack([nxt.weight, np.zeros((nxt.fan_out, 1))]), nxt.bias)
    return Network(layers)


def combine(coeffs, nets):
    """Network realizing sum_m coeffs[m] * nets[m](x).

    All nets must share one architecture.  Depth is unchanged; hidden
    widths multiply by M, so size <= M^2 * C(nets[0]).
    """
    coeffs = [float(c) for c in coeffs]
    nets = list(nets)
    if len(coeffs) != len(nets) or not nets:
        raise ValueError("combine: need matching nonempty coeffs and nets")
    _require_same_arch(nets, "combine")
    depth = nets[0].depth
    if depth == 1:
        w = sum(c * n.layers[0].weight for c, n in zip(coeffs, nets))
        b = sum(c * n.layers[0].bias for c, n in zip(coeffs, nets))
        return Network([Layer(w, b)])
    first = Layer(
        np.vstack([n.layers[0].weight for n in nets]),
        np.concatenate([n.layers[0].bias for n in nets]),
    )
    layers = [first]
    for l in range(1, depth - 1):
        layers.append(
            Layer(
                block_diag(*[n.layers[l].weight for n in nets]),
                np.concatenate([n.layers[l].bias for n in nets]),
            )
        )
    last = Layer(
        np.hstack([c * n.layers[-1].weight for c, n in zip(coeffs, nets)]),
        sum(c * n.layers[-1].bias for c, n in zip(coeffs, nets)),
    )
    layers.append(last)
    return Network(layers)


def parallel_shared(net_a, net_b):
    """Network realizing x -> (net_a(x), net_b(x)); size <= 2(C_a + C_b)."""
    _require_same_arch([net_a, net_b], "parallel_shared")
    depth = net_a.depth
    if depth == 1:
        return Network(
            [
                Layer(
                    np.vstack([net_a.layers[0].weight, net_b.layers[0].weight]),
                    np.concatenate([net_a.layers[0].bias, net_b.layers[0].bias]),
                )
            ]
        )
    layers = [
        Layer(
            np.vstack([net_a.layers[0].weight, net_b.layers[0].weight]),
            np.concatenate([net_a.layers[0].bias, net_b.layers[0].bias]),
        )
    ]
    for l in range(1, depth):
        layers.append(
            Layer(
                block_diag(net_a.layers[l].weight, net_b.layers[l].weight),
                np.concatenate([net_a.layers[l].bias, net_b.layers[l].bias]),
            )
        )
    return Network(layers)


def _split_branch_first(branch, d):
    w = branch.layers[0].weight
    if w.shape[1] <= d:
        raise NetworkShapeError(
            "add_compose branch must take more inputs than the base output"
        )
    return w[:, :d], w[:, d:]


def add_compose(base, branches, u):
    """Network realizing x -> base(x) + sum_m branch_m(base(x), u).

    base maps R^d -> R^d; every branch maps R^(d+d') -> R^d at one common
    depth L'; u in R^(d') is frozen into biases, so the architecture of the
    result does not depend on u.  Resulting depth is L_base + L' - 1.  The
    base value is carried past the branch layers as a (relu, relu-of-minus)
    pair, giving last hidden width 2d + sum_m N^m_(L'-1) when L' >= 2.
    """
    d = base.dim_out
    if base.dim_in != d:
        raise NetworkShapeError("add_compose base must map R^d to R^d")
    branches = list(branches)
    if not branches:
        raise ValueError("add_compose needs at least one branch")
    depth_b = branches[0].depth
    for br in branches:
        if br.depth != depth_b:
            raise NetworkShapeError("add_compose branches must share one depth")
        if br.dim_out != d:
            raise NetworkShapeError("add_compose branches must output R^d")
        if br.dim_in != branches[0].dim_in:
            raise NetworkShapeError("add_compose branches must share input width")
    d_aux = branches[0].dim_in - d
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != d_aux:
        raise NetworkShapeError(
            "add_compose: u has length %d but branches expect %d" % (len(u), d_aux)
        )

    w_last, b_last = base.layers[-1].weight, base.layers[-1].bias
    head = list(base.layers[:-1])

    if depth_b == 1:
        gain = np.eye(d)
        shift = np.zeros(d)
        for br in branches:
            wx, wu = _split_branch_first(br, d)
            gain = gain + wx
            shift = shift + wu @ u + br.layers[0].bias
        return Network(head + [Layer(gain @ w_last, gain @ b_last + shift)])

    split = np.vstack([np.eye(d), -np.eye(d)])
    seam_w = [split @ w_last]
    seam_b = [split @ b_last]
    for br in branches:
        wx, wu = _split_branch_first(br, d)
        seam_w.append(wx @ w_last)
        seam_b.append(wx @ b_last + wu @ u + br.layers[0].bias)
    layers = head + [Layer(np.vstack(seam_w), np.concatenate(seam_b))]

    carry = np.block([[np.eye(d), -np.eye(d)], [-np.eye(d), np.eye(d)]])
    for j in range(1, depth_b - 1):
        blocks = [carry] + [br.layers[j].weight for br in branches]
        biases = [np.zeros(2 * d)] + [br.layers[j].bias for br in branches]
        layers.append(Layer(block_diag(*blocks), np.concatenate(biases)))

    out_w = [np.hstack([np.eye(d), -np.eye(d)])] + [
        br.layers[-1].weight for br in branches
    ]
    out_b = sum(br.layers[-1].bias for br in branches)
    layers.append(Layer(np.hstack(out_w), out_b))
    return Network(layers)


def add_compose_bound(base, branches):
    """Size bound for add_compose when the width condition holds.

    Bound: C(base) + k^2 (sup_m C(branch_m) + C(identity_net(d,2)))^3 with
    k the branch count.  Valid for branch depth >= 2 when the base's last
    hidden width does not exceed 2d + sum of branch first hidden widths.
    """
    d = base.dim_out
    id2 = 4 * d * d + 3 * d
    k = len(branches)
    top = max(br.size for br in branches)
    return base.size + k * k * (top + id2) ** 3


_PSI_MAX_W1 = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
_PSI_MAX_W2 = np.array([[0.5, 0.5, 0.5, -0.5]])


def psi_max_net():
    """Two-layer net of size 17 realizing (a, b) -> max(a, b) exactly."""
    return Network([Layer(_PSI_MAX_W1, np.zeros(4)), Layer(_PSI_MAX_W2, np.zeros(1))])


def pad_to_pow2(nets):
    """Pad a net list to power-of-two length by repeating the last entry."""
    nets = list(nets)
    n = 1
    while n < len(nets):
        n *= 2
    return nets + [nets[-1]] * (n - len(nets))


def max_tree(nets):
    """Pointwise maximum of 2^n same-architecture scalar nets.

    Pairwise: parallelize two operands, compose with the exact 2-input max
    net, recurse.  Size <= 8^n (C + 34/7) - 34/7.
    """
    nets = list(nets)
    n = len(nets)
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError("max_tree needs a power-of-two count (see pad_to_pow2)")
    _require_same_arch(nets, "max_tree")
    if nets[0].dim_out != 1:
        raise NetworkShapeError("max_tree operands must have scalar output")
    if n == 1:
        return nets[0]
    half = n // 2
    left = max_tree(nets[:half])
    right = max_tree(nets[half:])
    return compose(psi_max_net(), parallel_shared(left, right))


def min_tree(nets):
    """Pointwise minimum via min(f) = -max(-f); same size bound as max_tree."""
    neg = np.array([[-1.0]])
    flipped = [fold_affine(net, "post", neg) for net in nets]
    return fold_affine(max_tree(flipped), "post", neg)


def max_tree_bound(leaf_size, n_levels):
    """The 8^n (C + 34/7) - 34/7 size bound, exact in rational arithmetic."""
    num = 8**n_levels * (7 * leaf_size + 34) - 34
    return num / 7.0


def _sawtooth_terms(eps):
    if not 0.0 < eps < 0.5:
        raise ValueError("accuracy must lie in (0, 1/2)")
    return max(1, math.ceil(0.5 * math.log2(1.0 / eps)) - 1)


def square_unit_net(eps):
    """ReLU net approximating x^2 on [0,1] within eps, exact elsewhere.

    Uses the sawtooth interpolant f_S(x) = x - sum_(s=1..S) g_s(x)/4^s,
    where g is the tooth 2*relu(x) - 4*relu(x-1/2) + 2*relu(x-1) and g_s is
    its s-fold self-composition.  f_S interpolates x^2 at the dyadic nodes
    k*2^-S (error exactly 0 there) and deviates at most 4^-(S+1) <= eps in
    between; outside [0,1] every tooth vanishes and f_S(x) = x.

    Each hidden layer carries six channels: relu(x), relu(-x) (the input
    carrier), the accumulated nonnegative tooth sum, and the three ReLU
    units that feed the next tooth.  Depth S+1, so size is O(log(1/eps)).
    """
    s_terms = _sawtooth_terms(eps)
    tooth = np.array([2.0, -4.0, 2.0])
    offsets = np.array([0.0, -0.5, -1.0])

    first_w = np.array([[1.0], [-1.0], [0.0], [1.0], [1.0], [1.0]])
    first_b = np.array([0.0, 0.0, 0.0, 0.0, -0.5, -1.0])
    layers = [Layer(first_w, first_b)]

    for k in range(2, s_terms + 1):
        w = np.zeros((6, 6))
        b = np.zeros(6)
        w[0, 0] = 1.0
        w[1, 1] = 1.0
        w[2, 2] = 1.0
        w[2, 3:6] = tooth / 4.0 ** (k - 1)
        for row in range(3):
            w[3 + row, 3:6] = tooth
            b[3 + row] = offsets[row]
        layers.append(Layer(w, b))

    out_w = np.zeros((1, 6))
    out_w[0, 0] = 1.0
    out_w[0, 1] = -1.0
    out_w[0, 2] = -1.0
    out_w[0, 3:6] = -tooth / 4.0**s_terms
    layers.append(Layer(out_w, np.zeros(1)))
    return Network(layers)


SQUARE_SIZE_COEFF = 64


def weighted_square_bound(d, eps):
    """Calibrated size bound C d^2 log(1/eps) + d + 1 for the square nets."""
    return SQUARE_SIZE_COEFF * d * d * max(1.0, math.log(1.0 / eps)) + d + 1


def weighted_square_net(beta, D, eps):
    """Truncated weighted square function and its ReLU network.

    Target: f_(d,D)(x) = sum_m beta_m f_(1,D)(x_m) with f_(1,D)(x) = x^2 for
    |x| <= D and D|x| otherwise.  The network realizes
    sum_m beta_m D^2 q(|x_m|/D) with q the unit square net, so the sup gap
    to the target is at most max|beta| * d * D^2 * eps, and the realization
    is exact outside the box.  Size <= SQUARE_SIZE_COEFF d^2 log(1/eps)+d+1.
    """
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    d = beta.shape[0]
    D = float(D)
    if D <= 0.0:
        raise ValueError("truncation radius must be positive")
    unit = square_unit_net(eps)

    def target(x):
        x = np.asarray(x, dtype=np.float64)
        ax = np.abs(x)
        per = np.where(ax <= D, x * x, D * ax)
        return per @ beta

    scale = np.array([[1.0 / D], [-1.0 / D]])
    abs_layer = Layer(block_diag(*[scale] * d), np.zeros(2 * d))

    w1 = unit.layers[0].weight  # (6,1)
    pair = np.hstack([w1, w1])  # feed relu(x)+relu(-x) = |x|
    enter = Layer(
        block_diag(*[pair] * d), np.tile(unit.layers[0].bias, d)
    )
    layers = [abs_layer, enter]
    for mid in unit.layers[1:-1]:
        layers.append(Layer(block_diag(*[mid.weight] * d), np.tile(mid.bias, d)))
    w_out, b_out = unit.layers[-1].weight, unit.layers[-1].bias
    final = Layer(
        np.hstack([beta[m] * D * D * w_out for m in range(d)]),
        sum(beta[m] * D * D * b_out for m in range(d)),
    )
    layers.append(final)
    return target, Network(layers)
