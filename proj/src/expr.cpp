#include "survkan/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <vector>

namespace survkan {

namespace {

struct Node {
    enum class Kind { constant, var, unary, binary, call };
    Kind kind;
    double value = 0.0;
    int var = 0;  // 0-based
    char op = 0;
    double (*fn)(double) = nullptr;
    std::unique_ptr<Node> lhs, rhs;
};

double sgn_fn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }
double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Fn {
    const char* name;
    double (*fn)(double);
};

constexpr Fn kFns[] = {
    {"sinh", std::sinh}, {"cosh", std::cosh}, {"tanh", std::tanh},
    {"sin", std::sin},   {"cos", std::cos},   {"tan", std::tan},
    {"arctanh", std::atanh}, {"arctan", std::atan}, {"atan", std::atan},
    {"exp", std::exp},   {"log", std::log},   {"sqrt", std::sqrt},
    {"abs", std::fabs},  {"sgn", sgn_fn},     {"sign", sgn_fn},
    {"sigmoid", sigmoid_fn},
};

class Parser {
  public:
    explicit Parser(const std::string& s) : s_(s) {}

    std::unique_ptr<Node> parse() {
        auto n = expr();
        skip_ws();
        if (pos_ != s_.size())
            throw ExprError("unexpected trailing input at position " +
                            std::to_string(pos_));
        return n;
    }

    int max_var = 0;

  private:
    const std::string& s_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::unique_ptr<Node> expr() {  // + -
        auto lhs = term();
        for (;;) {
            if (consume('+')) lhs = binary('+', std::move(lhs), term());
            else if (consume('-')) lhs = binary('-', std::move(lhs), term());
            else return lhs;
        }
    }

    std::unique_ptr<Node> term() {  // * /
        auto lhs = unary();
        for (;;) {
            if (consume('*')) lhs = binary('*', std::move(lhs), unary());
            else if (consume('/')) lhs = binary('/', std::move(lhs), unary());
            else return lhs;
        }
    }

    std::unique_ptr<Node> unary() {
        if (consume('-')) {
            auto n = std::make_unique<Node>();
            n->kind = Node::Kind::unary;
            n->op = '-';
            n->lhs = unary();
            return n;
        }
        if (consume('+')) return unary();
        return power();
    }

    std::unique_ptr<Node> power() {  // right-associative ^
        auto base = atom();
        if (consume('^')) return binary('^', std::move(base), unary());
        return base;
    }

    static std::unique_ptr<Node> binary(char op, std::unique_ptr<Node> l,
                                        std::unique_ptr<Node> r) {
        auto n = std::make_unique<Node>();
        n->kind = Node::Kind::binary;
        n->op = op;
        n->lhs = std::move(l);
        n->rhs = std::move(r);
        return n;
    }

    std::unique_ptr<Node> atom() {
        skip_ws();
        if (pos_ >= s_.size()) throw ExprError("unexpected end of expression");
        const char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            auto n = expr();
            if (!consume(')')) throw ExprError("missing ')'");
            return n;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            const double v = std::stod(s_.substr(pos_), &used);
            pos_ += used;
            auto n = std::make_unique<Node>();
            n->kind = Node::Kind::constant;
            n->value = v;
            return n;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos_;
            while (end < s_.size() &&
                   (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '_'))
                ++end;
            const std::string name = s_.substr(pos_, end - pos_);
            pos_ = end;
            if (name == "pi") {
                auto n = std::make_unique<Node>();
                n->kind = Node::Kind::constant;
                n->value = M_PI;
                return n;
            }
            if (name == "e") {
                auto n = std::make_unique<Node>();
                n->kind = Node::Kind::constant;
                n->value = M_E;
                return n;
            }
            if (name.size() >= 2 && name[0] == 'x' &&
                std::all_of(name.begin() + 1, name.end(), [](char ch) {
                    return std::isdigit(static_cast<unsigned char>(ch));
                })) {
                const int k = std::stoi(name.substr(1));
                if (k < 1) throw ExprError("variables are 1-based: " + name);
                max_var = std::max(max_var, k);
                auto n = std::make_unique<Node>();
                n->kind = Node::Kind::var;
                n->var = k - 1;
                return n;
            }
            for (const auto& f : kFns) {
                if (name == f.name) {
                    if (!consume('(')) throw ExprError(name + ": expected '('");
                    auto arg = expr();
                    if (!consume(')')) throw ExprError(name + ": missing ')'");
                    auto n = std::make_unique<Node>();
                    n->kind = Node::Kind::call;
                    n->fn = f.fn;
                    n->lhs = std::move(arg);
                    return n;
                }
            }
            throw ExprError("unknown identifier: " + name);
        }
        throw ExprError(std::string("unexpected character '") + c + "'");
    }
};

double eval_node(const Node& n, std::span<const double> row) {
    switch (n.kind) {
        case Node::Kind::constant: return n.value;
        case Node::Kind::var:
            if (n.var >= static_cast<int>(row.size()))
                throw ExprError("row too short for variable x" +
                                std::to_string(n.var + 1));
            return row[n.var];
        case Node::Kind::unary: return -eval_node(*n.lhs, row);
        case Node::Kind::call: return n.fn(eval_node(*n.lhs, row));
        case Node::Kind::binary: {
            const double a = eval_node(*n.lhs, row);
            const double b = eval_node(*n.rhs, row);
            switch (n.op) {
                case '+': return a + b;
                case '-': return a - b;
                case '*': return a * b;
                case '/': return a / b;
                case '^': return std::pow(a, b);
            }
        }
    }
    return 0.0;
}

}  // namespace

struct CompiledExpr::Impl {
    std::unique_ptr<Node> root;
    int max_var = 0;
    std::string text;
};

CompiledExpr::CompiledExpr(const std::string& text) : impl_(std::make_unique<Impl>()) {
    Parser p(text);
    impl_->root = p.parse();
    impl_->max_var = p.max_var;
    impl_->text = text;
}

CompiledExpr::CompiledExpr(CompiledExpr&&) noexcept = default;
CompiledExpr& CompiledExpr::operator=(CompiledExpr&&) noexcept = default;
CompiledExpr::~CompiledExpr() = default;

double CompiledExpr::eval(std::span<const double> row) const {
    return eval_node(*impl_->root, row);
}

int CompiledExpr::max_var() const { return impl_->max_var; }
const std::string& CompiledExpr::text() const { return impl_->text; }

}  // namespace survkan
