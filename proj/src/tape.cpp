#include "bruno/tape.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "bruno/errors.hpp"

namespace bruno::ad {

namespace {

constexpr std::size_t kBlockDoubles = std::size_t{1} << 18;

bool all_finite(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

std::size_t broadcast_size(std::size_t na, std::size_t nb) {
    if (na == nb || nb == 1) return na;
    if (na == 1) return nb;
    throw UsageError("incompatible operand sizes " + std::to_string(na) + " and " + std::to_string(nb));
}

double eval(Op op, double x, double y, double c) {
    switch (op) {
        case Op::Add: return x + y;
        case Op::Sub: return x - y;
        case Op::Mul: return x * y;
        case Op::Div: return x / y;
        case Op::AddScaled: return x + c * y;
        default: throw UsageError("not a binary elementwise op");
    }
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: case Op::AddK: case Op::Offset: return "add";
        case Op::Sub: case Op::SubK: case Op::RSubK: return "sub";
        case Op::Mul: case Op::MulK: case Op::Scale: return "mul";
        case Op::Div: case Op::DivK: case Op::RDivK: return "div";
        case Op::AddScaled: case Op::KAddScaled: return "add_scaled";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Pow: return "pow";
        case Op::Abs: return "abs";
        case Op::Clamp: return "clamp";
        case Op::Sum: return "sum";
        case Op::MatVec: return "matvec";
        case Op::Detach: return "detach";
        case Op::Diagonal: return "custom";
    }
    return "?";
}

void check_divisor(std::span<const double> d) {
    for (double v : d) {
        if (v == 0.0) throw DomainError("division by zero");
    }
}

std::vector<double> eval_constant(Op op, std::span<const double> a, std::span<const double> b, double c) {
    const std::size_t n = broadcast_size(a.size(), b.size());
    if (op == Op::Div) check_divisor(b);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = eval(op, a[a.size() == 1 ? 0 : i], b[b.size() == 1 ? 0 : i], c);
    }
    for (double v : out) {
        if (!std::isfinite(v)) throw NumericInstability("non-finite constant arithmetic");
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Value

Value::Value(double c) : const_(std::make_shared<const std::vector<double>>(1, c)) {
    if (!std::isfinite(c)) throw NumericInstability("non-finite constant");
}

Value Value::constant(std::vector<double> data) {
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericInstability("non-finite constant");
    }
    Value v;
    v.const_ = std::make_shared<const std::vector<double>>(std::move(data));
    return v;
}

std::size_t Value::size() const noexcept {
    if (is_constant()) return const_ ? const_->size() : 0;
    return tape_->nodes_[id_].size;
}

std::span<const double> Value::data() const {
    if (is_constant()) {
        if (!const_) return {};
        return {const_->data(), const_->size()};
    }
    const auto& n = tape_->nodes_[id_];
    return {n.value, n.size};
}

double Value::item() const {
    if (size() != 1) throw UsageError("item() on a value of size " + std::to_string(size()));
    return data()[0];
}

// ---------------------------------------------------------------------------
// Gradients

std::vector<double> Gradients::wrt(const Value& v) const {
    if (!v.is_constant()) {
        auto it = leaf_.find(v.id());
        if (it != leaf_.end()) return it->second;
    }
    return std::vector<double>(v.size(), 0.0);
}

double Gradients::scalar(const Value& v) const {
    auto g = wrt(v);
    if (g.size() != 1) throw UsageError("scalar gradient requested for a non-scalar value");
    return g[0];
}

// ---------------------------------------------------------------------------
// Tape storage

double* Tape::allocate(std::size_t n) {
    if (n == 0) return nullptr;
    if (blocks_.empty() || block_cap_ - block_used_ < n) {
        const std::size_t cap = std::max(kBlockDoubles, n);
        blocks_.push_back(std::make_unique<double[]>(cap));
        block_cap_ = cap;
        block_used_ = 0;
    }
    double* p = blocks_.back().get() + block_used_;
    block_used_ += n;
    charge(n);
    return p;
}

void Tape::charge(std::size_t doubles) {
    payload_doubles_ += doubles;
    if (byte_limit_ != 0 && bytes() > byte_limit_) throw TapeBudgetExceeded(bytes());
}

const double* Tape::hold(const Value& constant) {
    held_.push_back(constant.const_);
    charge(constant.const_->size());
    return constant.const_->data();
}

std::size_t Tape::bytes() const noexcept {
    return nodes_.size() * sizeof(Node) + payload_doubles_ * sizeof(double);
}

void Tape::reset() {
    nodes_.clear();
    nodes_.shrink_to_fit();
    blocks_.clear();
    held_.clear();
    block_used_ = block_cap_ = 0;
    total_size_ = 0;
    payload_doubles_ = 0;
}

const Tape::Node& Tape::node(const Value& v) const { return nodes_[v.id()]; }

void Tape::check_same_tape(const Value& v) const {
    if (!v.is_constant() && v.tape() != this) throw UsageError("value belongs to a different tape");
}

Value Tape::push(Node n, const char* what) {
    if (!all_finite(n.value, n.size)) {
        throw NumericInstability(std::string("non-finite forward value in ") + what);
    }
    n.adj = total_size_;
    total_size_ += n.size;
    nodes_.push_back(n);
    if (byte_limit_ != 0 && bytes() > byte_limit_) throw TapeBudgetExceeded(bytes());
    return Value(this, static_cast<NodeId>(nodes_.size() - 1));
}

Value Tape::variable(std::vector<double> init) {
    Node n;
    n.op = Op::Leaf;
    n.size = static_cast<std::uint32_t>(init.size());
    double* out = allocate(init.size());
    std::copy(init.begin(), init.end(), out);
    n.value = out;
    return push(n, "leaf");
}

// ---------------------------------------------------------------------------
// Recorders

Value Tape::binary(Op op, const Value& a, const Value& b, double c) {
    check_same_tape(a);
    check_same_tape(b);
    const auto da = a.data();
    const auto db = b.data();
    const std::size_t n = broadcast_size(da.size(), db.size());

    if (a.is_constant() && b.is_constant()) return Value::constant(eval_constant(op, da, db, c));
    if (op == Op::Div) check_divisor(db);

    Node nd;
    nd.size = static_cast<std::uint32_t>(n);
    nd.c0 = c;
    double* out = allocate(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = eval(op, da[da.size() == 1 ? 0 : i], db[db.size() == 1 ? 0 : i], c);
    }
    nd.value = out;

    if (!a.is_constant() && !b.is_constant()) {
        nd.op = op;
        nd.a = a.id();
        nd.b = b.id();
        return push(nd, op_name(op));
    }

    // Exactly one side is a node. Scalar constants ride in c0; vector
    // constants are held alive by the tape and referenced from aux.
    const Value& k = a.is_constant() ? a : b;
    const bool scalar_k = k.size() == 1;
    nd.a = a.is_constant() ? b.id() : a.id();
    switch (op) {
        case Op::Add:
            if (scalar_k) { nd.op = Op::Offset; nd.c0 = k.item(); }
            else nd.op = Op::AddK;
            break;
        case Op::Sub:
            if (a.is_constant()) nd.op = Op::RSubK;
            else if (scalar_k) { nd.op = Op::Offset; nd.c0 = -k.item(); }
            else nd.op = Op::SubK;
            break;
        case Op::Mul:
            if (scalar_k) { nd.op = Op::Scale; nd.c0 = k.item(); }
            else nd.op = Op::MulK;
            break;
        case Op::Div:
            nd.op = a.is_constant() ? Op::RDivK : Op::DivK;
            break;
        case Op::AddScaled:
            // a + c*K is recorded as a + K' with K' = c*K, same rounding.
            if (a.is_constant()) {
                nd.op = Op::KAddScaled;
            } else {
                nd.op = Op::AddK;
                std::vector<double> scaled(db.size());
                for (std::size_t i = 0; i < db.size(); ++i) scaled[i] = c * db[i];
                Value ks = Value::constant(std::move(scaled));
                nd.aux = hold(ks);
                nd.aux_size = static_cast<std::uint32_t>(ks.size());
                return push(nd, op_name(op));
            }
            break;
        default:
            throw UsageError("not a binary elementwise op");
    }
    if (nd.op != Op::Offset && nd.op != Op::Scale) {
        nd.aux = hold(k);
        nd.aux_size = static_cast<std::uint32_t>(k.size());
    }
    return push(nd, op_name(op));
}

Value Tape::unary(Op op, const Value& a, double c0, double c1) {
    check_same_tape(a);
    const auto da = a.data();
    const std::size_t n = op == Op::Sum ? 1 : da.size();

    std::vector<double> tmp;
    double* out = nullptr;
    if (a.is_constant()) {
        tmp.resize(n);
        out = tmp.data();
    } else {
        out = allocate(n);
    }

    switch (op) {
        case Op::Scale:
            for (std::size_t i = 0; i < n; ++i) out[i] = c0 * da[i];
            break;
        case Op::Offset:
            for (std::size_t i = 0; i < n; ++i) out[i] = da[i] + c0;
            break;
        case Op::Exp:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(da[i]);
            break;
        case Op::Log:
            for (std::size_t i = 0; i < n; ++i) {
                if (da[i] <= 0.0) throw DomainError("log of non-positive value");
                out[i] = std::log(da[i]);
            }
            break;
        case Op::Pow:
            for (std::size_t i = 0; i < n; ++i) {
                if (da[i] < 0.0 && c0 != std::floor(c0)) throw DomainError("fractional power of a negative value");
                if (da[i] == 0.0 && c0 < 0.0) throw DomainError("negative power of zero");
                out[i] = std::pow(da[i], c0);
            }
            break;
        case Op::Abs:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(da[i]);
            break;
        case Op::Clamp:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(da[i], c0, c1);
            break;
        case Op::Sum: {
            double s = 0.0;
            for (double v : da) s += v;
            out[0] = s;
            break;
        }
        default:
            throw UsageError("not a unary op");
    }

    if (a.is_constant()) {
        for (double v : tmp) {
            if (!std::isfinite(v)) throw NumericInstability(std::string("non-finite constant ") + op_name(op));
        }
        return Value::constant(std::move(tmp));
    }
    Node nd;
    nd.op = op;
    nd.a = a.id();
    nd.size = static_cast<std::uint32_t>(n);
    nd.c0 = c0;
    nd.c1 = c1;
    nd.value = out;
    return push(nd, op_name(op));
}

Value Tape::matvec(const Value& w, const Value& x) {
    check_same_tape(w);
    check_same_tape(x);
    const auto dw = w.data();
    const auto dx = x.data();
    const std::size_t cols = dx.size();
    if (cols == 0 || dw.size() % cols != 0) {
        throw UsageError("matvec: matrix of " + std::to_string(dw.size()) + " elements is not a multiple of " +
                         std::to_string(cols) + " columns");
    }
    const std::size_t rows = dw.size() / cols;

    std::vector<double> tmp;
    double* out = nullptr;
    if (w.is_constant() && x.is_constant()) {
        tmp.resize(rows);
        out = tmp.data();
    } else {
        out = allocate(rows);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        const double* row = dw.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) s += row[j] * dx[j];
        out[r] = s;
    }
    if (w.is_constant() && x.is_constant()) return Value::constant(std::move(tmp));

    Node nd;
    nd.op = Op::MatVec;
    nd.size = static_cast<std::uint32_t>(rows);
    nd.c0 = static_cast<double>(cols);
    nd.a = w.id();
    nd.b = x.id();
    nd.value = out;
    if (w.is_constant()) {
        nd.aux = hold(w);
        nd.aux_size = static_cast<std::uint32_t>(w.size());
    } else if (x.is_constant()) {
        nd.aux = hold(x);
        nd.aux_size = static_cast<std::uint32_t>(x.size());
    }
    return push(nd, "matvec");
}

Value Tape::detach(const Value& x) {
    check_same_tape(x);
    if (x.is_constant()) return x;
    Node nd;
    nd.op = Op::Detach;
    nd.a = x.id();
    nd.size = node(x).size;
    nd.value = node(x).value;  // aliases the parent; no payload
    return push(nd, "detach");
}

Value Tape::substitute(const Value& base, std::vector<double> value) {
    check_same_tape(base);
    if (base.is_constant()) return Value::constant(std::move(value));
    const auto b = base.data();
    if (b.size() == value.size() &&
        std::equal(b.begin(), b.end(), value.begin(),
                   [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); })) {
        return base;  // already exact: the combine would be an identity
    }
    Value y = base + detach(Value::constant(value) - base);
    const Node& nd = nodes_[y.id()];
    if (nd.size != value.size()) throw UsageError("substitute: size mismatch");
    // The sum node owns its payload; pin it to the exact substituted value.
    std::copy(value.begin(), value.end(), const_cast<double*>(nd.value));
    return y;
}

Value Tape::record_diagonal(const Value& x, std::span<const double> value, std::span<const double> local_grad) {
    check_same_tape(x);
    if (value.size() != x.size() || local_grad.size() != x.size()) {
        throw UsageError("record_diagonal: value/gradient size does not match input");
    }
    if (x.is_constant()) return Value::constant({value.begin(), value.end()});
    Node nd;
    nd.op = Op::Diagonal;
    nd.a = x.id();
    nd.size = static_cast<std::uint32_t>(value.size());
    double* out = allocate(2 * value.size());
    std::copy(value.begin(), value.end(), out);
    std::copy(local_grad.begin(), local_grad.end(), out + value.size());
    nd.value = out;
    nd.aux = out + value.size();
    nd.aux_size = nd.size;
    return push(nd, "custom");
}

// ---------------------------------------------------------------------------
// Reverse sweep

Gradients Tape::backward(const Value& loss) {
    if (loss.is_constant() || loss.tape() != this) throw UsageError("backward: loss is not on this tape");
    if (loss.size() != 1) throw UsageError("backward: loss must be a scalar");

    std::vector<double> adj(total_size_, 0.0);
    std::vector<char> touched(nodes_.size(), 0);
    adj[nodes_[loss.id()].adj] = 1.0;
    touched[loss.id()] = 1;

    // Accumulate `contrib(i)` into parent p, reducing over i when p is size 1.
    auto accumulate = [&](NodeId p, std::size_t n, auto&& contrib) {
        if (p == kConstant) return;
        const Node& pn = nodes_[p];
        double* gp = adj.data() + pn.adj;
        touched[p] = 1;
        if (pn.size == n) {
            for (std::size_t i = 0; i < n; ++i) gp[i] += contrib(i);
        } else {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += contrib(i);
            gp[0] += s;
        }
    };

    for (std::int64_t idx = loss.id(); idx >= 0; --idx) {
        const NodeId id = static_cast<NodeId>(idx);
        if (!touched[id]) continue;
        const Node& nd = nodes_[id];
        const double* g = adj.data() + nd.adj;
        const std::size_t n = nd.size;
        if (!all_finite(g, n)) throw GradientExplosion(id);

        const double* y = nd.value;
        const double* av = nd.a != kConstant ? nodes_[nd.a].value : nullptr;
        const std::size_t an = nd.a != kConstant ? nodes_[nd.a].size : 0;
        const double* bv = nd.b != kConstant ? nodes_[nd.b].value : nullptr;
        const std::size_t bn = nd.b != kConstant ? nodes_[nd.b].size : 0;
        auto A = [&](std::size_t i) { return av[an == 1 ? 0 : i]; };
        auto B = [&](std::size_t i) { return bv[bn == 1 ? 0 : i]; };
        auto K = [&](std::size_t i) { return nd.aux[nd.aux_size == 1 ? 0 : i]; };

        switch (nd.op) {
            case Op::Leaf:
            case Op::Detach:
                break;
            case Op::Add:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i]; });
                accumulate(nd.b, n, [&](std::size_t i) { return g[i]; });
                break;
            case Op::Sub:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i]; });
                accumulate(nd.b, n, [&](std::size_t i) { return -g[i]; });
                break;
            case Op::Mul:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] * B(i); });
                accumulate(nd.b, n, [&](std::size_t i) { return g[i] * A(i); });
                break;
            case Op::Div:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] / B(i); });
                accumulate(nd.b, n, [&](std::size_t i) { return -g[i] * y[i] / B(i); });
                break;
            case Op::AddScaled:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i]; });
                accumulate(nd.b, n, [&](std::size_t i) { return nd.c0 * g[i]; });
                break;
            case Op::KAddScaled:
                accumulate(nd.a, n, [&](std::size_t i) { return nd.c0 * g[i]; });
                break;
            case Op::AddK:
            case Op::SubK:
            case Op::Offset:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i]; });
                break;
            case Op::RSubK:
                accumulate(nd.a, n, [&](std::size_t i) { return -g[i]; });
                break;
            case Op::MulK:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] * K(i); });
                break;
            case Op::DivK:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] / K(i); });
                break;
            case Op::RDivK:
                accumulate(nd.a, n, [&](std::size_t i) { return -g[i] * y[i] / A(i); });
                break;
            case Op::Scale:
                accumulate(nd.a, n, [&](std::size_t i) { return nd.c0 * g[i]; });
                break;
            case Op::Exp:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] * y[i]; });
                break;
            case Op::Log:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] / A(i); });
                break;
            case Op::Pow:
                accumulate(nd.a, n, [&](std::size_t i) {
                    return nd.c0 == 0.0 ? 0.0 : g[i] * nd.c0 * std::pow(A(i), nd.c0 - 1.0);
                });
                break;
            case Op::Abs:
                accumulate(nd.a, n, [&](std::size_t i) {
                    const double x = A(i);
                    return x > 0.0 ? g[i] : (x < 0.0 ? -g[i] : 0.0);
                });
                break;
            case Op::Clamp:
                accumulate(nd.a, n, [&](std::size_t i) {
                    const double x = A(i);
                    return (x > nd.c0 && x < nd.c1) ? g[i] : 0.0;
                });
                break;
            case Op::Sum: {
                const Node& pn = nodes_[nd.a];
                double* gp = adj.data() + pn.adj;
                touched[nd.a] = 1;
                for (std::size_t i = 0; i < pn.size; ++i) gp[i] += g[0];
                break;
            }
            case Op::MatVec: {
                const std::size_t cols = static_cast<std::size_t>(nd.c0);
                const std::size_t rows = n;
                const double* w = nd.a != kConstant ? nodes_[nd.a].value : nd.aux;
                const double* x = nd.b != kConstant ? nodes_[nd.b].value : nd.aux;
                if (nd.a != kConstant) {
                    double* gw = adj.data() + nodes_[nd.a].adj;
                    touched[nd.a] = 1;
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double gr = g[r];
                        if (gr == 0.0) continue;
                        double* row = gw + r * cols;
                        for (std::size_t j = 0; j < cols; ++j) row[j] += gr * x[j];
                    }
                }
                if (nd.b != kConstant) {
                    double* gx = adj.data() + nodes_[nd.b].adj;
                    touched[nd.b] = 1;
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double gr = g[r];
                        if (gr == 0.0) continue;
                        const double* row = w + r * cols;
                        for (std::size_t j = 0; j < cols; ++j) gx[j] += row[j] * gr;
                    }
                }
                break;
            }
            case Op::Diagonal:
                accumulate(nd.a, n, [&](std::size_t i) { return g[i] * nd.aux[i]; });
                break;
        }
    }

    Gradients out;
    for (NodeId id = 0; id <= loss.id(); ++id) {
        const Node& nd = nodes_[id];
        if (nd.op != Op::Leaf) continue;
        const double* g = adj.data() + nd.adj;
        if (touched[id] && !all_finite(g, nd.size)) throw GradientExplosion(id);
        out.leaf_.emplace(id, std::vector<double>(g, g + nd.size));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Free functions

namespace {
Tape* tape_of(const Value& a, const Value& b) {
    if (!a.is_constant() && !b.is_constant() && a.tape() != b.tape()) {
        throw UsageError("operands belong to different tapes");
    }
    return a.is_constant() ? b.tape() : a.tape();
}

Value bin(Op op, const Value& a, const Value& b, double c = 0.0) {
    Tape* t = tape_of(a, b);
    if (t == nullptr) {
        return Value::constant(eval_constant(op, a.data(), b.data(), c));
    }
    return t->binary(op, a, b, c);
}

Value un(Op op, const Value& a, double c0 = 0.0, double c1 = 0.0) {
    if (a.is_constant()) {
        // Constants need a tape-free evaluation path.
        static thread_local Tape scratch;
        return scratch.unary(op, a, c0, c1);
    }
    return a.tape()->unary(op, a, c0, c1);
}
}  // namespace

Value operator+(const Value& a, const Value& b) { return bin(Op::Add, a, b); }
Value operator-(const Value& a, const Value& b) { return bin(Op::Sub, a, b); }
Value operator*(const Value& a, const Value& b) { return bin(Op::Mul, a, b); }
Value operator/(const Value& a, const Value& b) { return bin(Op::Div, a, b); }
Value operator-(const Value& a) { return un(Op::Scale, a, -1.0); }

Value add_scaled(const Value& a, double c, const Value& b) { return bin(Op::AddScaled, a, b, c); }
Value exp(const Value& x) { return un(Op::Exp, x); }
Value log(const Value& x) { return un(Op::Log, x); }
Value pow(const Value& x, double p) { return un(Op::Pow, x, p); }
Value abs(const Value& x) { return un(Op::Abs, x); }
Value clamp(const Value& x, double lo, double hi) {
    if (!(lo <= hi)) throw UsageError("clamp: lo > hi");
    return un(Op::Clamp, x, lo, hi);
}
Value sum(const Value& x) { return un(Op::Sum, x); }

Value sign(const Value& x) {
    const auto d = x.data();
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > 0.0 ? 1.0 : (d[i] < 0.0 ? -1.0 : 0.0);
    return Value::constant(std::move(out));
}

Value matvec(const Value& w, const Value& x) {
    Tape* t = tape_of(w, x);
    if (t == nullptr) {
        static thread_local Tape scratch;
        return scratch.matvec(w, x);
    }
    return t->matvec(w, x);
}

Value detach(const Value& x) {
    if (x.is_constant()) return x;
    return x.tape()->detach(x);
}

Value substitute(const Value& base, std::vector<double> value) {
    if (base.is_constant()) return Value::constant(std::move(value));
    return base.tape()->substitute(base, std::move(value));
}

double fast_sigmoid_grad(double x, double slope) {
    const double d = 1.0 + slope * std::fabs(x);
    return 1.0 / (d * d);
}

Value spike_sg(const Value& v, double threshold, double slope) {
    if (!(slope > 0.0)) throw UsageError("spike_sg: slope must be positive");
    const auto d = v.data();
    std::vector<double> out(d.size()), grad(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        out[i] = d[i] >= threshold ? 1.0 : 0.0;
        grad[i] = fast_sigmoid_grad(d[i] - threshold, slope);
    }
    if (v.is_constant()) return Value::constant(std::move(out));
    return v.tape()->record_diagonal(v, out, grad);
}

}  // namespace bruno::ad
