#include "df2am/array.hpp"

#include <cmath>
#include <sstream>

#include "df2am/errors.hpp"

namespace df2am {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("array shape must have at least one axis");
    for (auto e : shape) {
        if (e == 0) throw ShapeError("array extents must be positive, got " + shape_str(shape));
    }
}

}  // namespace

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Array Array::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Array({n}, std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Array({rows, cols}, std::move(values));
}

double Array::item() const {
    if (data_.size() != 1) throw ShapeError("item() on array of shape " + shape_str(shape_));
    return data_[0];
}

Array Array::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Array(std::move(shape), data_);
}

void Array::fill(double v) {
    for (auto& x : data_) x = v;
}

bool Array::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void require_same_shape(const Shape& a, const Shape& b, const char* where) {
    if (a != b) {
        throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

void require_finite(const Array& a, const char* where) {
    if (!a.all_finite()) {
        throw NumericalError(std::string("numerical overflow in ") + where + ": non-finite value");
    }
}

}  // namespace df2am
