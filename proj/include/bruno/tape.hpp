#pragma once

// Reverse-mode automatic differentiation over dense double vectors.
//
// A Tape records every differentiable operation as one node. Nodes are
// appended in evaluation order, so ids are topologically sorted and the
// reverse sweep is a single pass from the loss down to id 0. Each node holds
// a dense vector (size 1 for scalars); elementwise ops broadcast size-1
// operands. Values that never need a gradient are Constants and are not
// recorded.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace bruno::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kConstant = std::numeric_limits<NodeId>::max();

class Tape;

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddScaled,   // a + c*b
    KAddScaled,  // K + c*b, K held constant
    AddK,        // a + K
    SubK,        // a - K
    RSubK,       // K - a
    MulK,        // a * K
    DivK,        // a / K
    RDivK,       // K / a
    Scale,       // c * a
    Offset,      // a + c
    Exp,
    Log,
    Pow,         // a ^ c
    Abs,
    Clamp,
    Sum,
    MatVec,      // W (rows x cols, row-major) * x
    Detach,
    Diagonal,    // custom elementwise rule with saved local derivative
};

/// A handle to a recorded node, or a Constant carrying its own data.
class Value {
public:
    Value() = default;
    Value(double c);  // NOLINT: implicit scalar constants keep arithmetic readable
    static Value constant(std::vector<double> data);

    bool is_constant() const noexcept { return id_ == kConstant; }
    NodeId id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }

    std::size_t size() const noexcept;
    std::span<const double> data() const;
    double operator[](std::size_t i) const { return data()[i]; }
    /// The single element of a size-1 value.
    double item() const;

private:
    friend class Tape;
    Value(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    NodeId id_ = kConstant;
    std::shared_ptr<const std::vector<double>> const_;
};

/// Adjoints of the leaf (parameter) nodes after a reverse sweep.
class Gradients {
public:
    /// Gradient with respect to `v`. Constants and unreached leaves get zeros.
    std::vector<double> wrt(const Value& v) const;
    double scalar(const Value& v) const;
    const std::unordered_map<NodeId, std::vector<double>>& leaves() const noexcept { return leaf_; }

private:
    friend class Tape;
    std::unordered_map<NodeId, std::vector<double>> leaf_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// New differentiable leaf.
    Value variable(std::vector<double> init);
    Value variable(double init) { return variable(std::vector<double>{init}); }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    /// Deterministic storage footprint: node records plus recorded payload doubles.
    std::size_t bytes() const noexcept;
    static constexpr std::size_t node_record_bytes();

    /// Throw TapeBudgetExceeded once bytes() would pass `limit` (0 = unlimited).
    void set_byte_limit(std::size_t limit) noexcept { byte_limit_ = limit; }

    /// Drop all nodes and free storage. Values recorded earlier become dangling.
    void reset();

    /// Reverse sweep from a size-1 `loss`. Throws GradientExplosion on the first
    /// node whose accumulated adjoint is non-finite.
    Gradients backward(const Value& loss);

    /// Record a custom elementwise node: forward `value`, backward multiplies the
    /// incoming adjoint by `local_grad` elementwise.
    Value record_diagonal(const Value& x, std::span<const double> value, std::span<const double> local_grad);

    // Primitive recorders. Prefer the free functions below.
    Value binary(Op op, const Value& a, const Value& b, double c = 0.0);
    Value unary(Op op, const Value& a, double c0 = 0.0, double c1 = 0.0);
    Value matvec(const Value& w, const Value& x);
    Value detach(const Value& x);

    /// `base + detach(value - base)` recorded as its three nodes, with the
    /// result holding `value` exactly (plain floating-point evaluation of the
    /// sum may be off by an ulp). Records nothing and returns `base` when it
    /// already holds `value` bit for bit.
    Value substitute(const Value& base, std::vector<double> value);

private:
    struct Node {
        const double* value = nullptr;
        const double* aux = nullptr;
        std::uint64_t adj = 0;
        double c0 = 0.0;
        double c1 = 0.0;
        NodeId a = kConstant;
        NodeId b = kConstant;
        std::uint32_t size = 0;
        std::uint32_t aux_size = 0;
        Op op = Op::Leaf;
    };

    double* allocate(std::size_t n);
    const double* hold(const Value& constant);
    Value push(Node node, const char* what);
    void charge(std::size_t doubles);
    const Node& node(const Value& v) const;
    void check_same_tape(const Value& v) const;

    friend class Value;

    std::vector<Node> nodes_;
    std::vector<std::unique_ptr<double[]>> blocks_;
    std::size_t block_used_ = 0;
    std::size_t block_cap_ = 0;
    std::vector<std::shared_ptr<const std::vector<double>>> held_;
    std::uint64_t total_size_ = 0;
    std::size_t payload_doubles_ = 0;
    std::size_t byte_limit_ = 0;
};

constexpr std::size_t Tape::node_record_bytes() { return sizeof(Node); }

// Elementwise arithmetic. Mixed Value/Constant operands record only when at
// least one side is a node.
Value operator+(const Value& a, const Value& b);
Value operator-(const Value& a, const Value& b);
Value operator*(const Value& a, const Value& b);
Value operator/(const Value& a, const Value& b);
Value operator-(const Value& a);

/// a + c*b as a single node.
Value add_scaled(const Value& a, double c, const Value& b);
Value exp(const Value& x);
Value log(const Value& x);
Value pow(const Value& x, double p);
Value abs(const Value& x);
/// Sign has zero derivative everywhere, so it returns a Constant.
Value sign(const Value& x);
/// Derivative is 1 strictly inside (lo, hi) and 0 at or beyond the bounds.
Value clamp(const Value& x, double lo, double hi);
Value sum(const Value& x);
Value matvec(const Value& w, const Value& x);
/// Forward identity, backward zero.
Value detach(const Value& x);
/// Forward value `value`, gradient that of `base`: see Tape::substitute.
Value substitute(const Value& base, std::vector<double> value);

/// Heaviside spike with fast-sigmoid surrogate derivative 1/(1 + k|v - thr|)^2.
Value spike_sg(const Value& v, double threshold, double slope);

/// Surrogate derivative used by spike_sg, exposed for oracles.
double fast_sigmoid_grad(double x, double slope);

}  // namespace bruno::ad
