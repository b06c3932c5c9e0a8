#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wt/error.hpp"

namespace wt {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass touches this tensor
    bool requires_grad = false;
};

}  // namespace detail

/// Reference-counted dense row-major array. Copies share storage (handle
/// semantics); use clone() for a deep copy.
template <typename T>
class BasicTensor {
   public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
        validate_shape(shape);
        impl_->data.assign(element_count(shape), fill);
        impl_->shape = std::move(shape);
    }

    BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
        validate_shape(shape);
        if (element_count(shape) != values.size()) {
            fail(ErrorKind::shape, "tensor shape " + to_string(shape) + " holds " +
                                       std::to_string(element_count(shape)) + " elements, got " +
                                       std::to_string(values.size()));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() const { return impl_->data; }
    T* ptr() const { return impl_->data.data(); }

    T& operator[](std::size_t i) const { return impl_->data[i]; }

    T item() const {
        require(numel() == 1, ErrorKind::shape, "item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    const BasicTensor& set_requires_grad(bool on) const {
        impl_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }

    /// Gradient buffer, allocated (zero-filled) on first access.
    std::span<T> grad() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
        return impl_->grad;
    }

    void zero_grad() const {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    void drop_grad() const { impl_->grad.clear(); }

    /// Deep copy of shape, data and requires_grad; gradient is not copied.
    BasicTensor clone() const {
        BasicTensor out(shape(), std::vector<T>(impl_->data));
        out.impl_->requires_grad = impl_->requires_grad;
        return out;
    }

    bool same_storage(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }

    detail::TensorImpl<T>* impl() const noexcept { return impl_.get(); }

   private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) fail(ErrorKind::shape, "tensor rank must be at least 1");
        for (auto extent : shape) {
            if (extent == 0) fail(ErrorKind::shape, "tensor extents must be positive, got " + to_string(shape));
        }
    }

    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;

/// Ordered record of differentiable operations. Entries are appended in
/// execution order, which is a topological order of the computation graph.
template <typename T>
class BasicTape {
   public:
    struct Entry {
        const char* op;
        std::vector<BasicTensor<T>> inputs;
        BasicTensor<T> output;
        std::function<void()> backward;
    };

    static BasicTape& current() {
        thread_local BasicTape tape;
        return tape;
    }

    bool recording() const noexcept { return paused_ == 0; }

    bool wants(std::initializer_list<const BasicTensor<T>*> inputs) const {
        if (!recording()) return false;
        for (const auto* t : inputs) {
            if (t && t->defined() && t->requires_grad()) return true;
        }
        return false;
    }

    void record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                std::function<void()> backward) {
        output.set_requires_grad(true);
        entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    void clear() { entries_.clear(); }

    void pause() { ++paused_; }
    void resume() { --paused_; }

   private:
    std::vector<Entry> entries_;
    int paused_ = 0;
};

using Tape = BasicTape<float>;

/// Disables recording for the current thread while in scope.
template <typename T>
class BasicNoGradGuard {
   public:
    BasicNoGradGuard() { BasicTape<T>::current().pause(); }
    ~BasicNoGradGuard() { BasicTape<T>::current().resume(); }
    BasicNoGradGuard(const BasicNoGradGuard&) = delete;
    BasicNoGradGuard& operator=(const BasicNoGradGuard&) = delete;
};

using NoGradGuard = BasicNoGradGuard<float>;

/// Reverse traversal from a scalar loss. Gradients accumulate into every
/// tensor that requires them; the tape is cleared afterwards, so a second
/// call without a new forward pass is an error.
template <typename T>
void backward(const BasicTensor<T>& loss) {
    require(loss.defined() && loss.numel() == 1, ErrorKind::shape,
            "backward requires a scalar loss, got shape " + (loss.defined() ? to_string(loss.shape()) : "[]"));
    auto& tape = BasicTape<T>::current();
    const auto& entries = tape.entries();
    std::size_t end = entries.size();
    while (end > 0 && !entries[end - 1].output.same_storage(loss)) --end;
    if (end == 0) {
        tape.clear();
        fail(ErrorKind::state, "backward: loss is not on the tape (was backward already called for this forward?)");
    }
    loss.grad()[0] += T(1);
    for (std::size_t i = end; i-- > 0;) {
        const auto& entry = entries[i];
        if (entry.output.has_grad()) entry.backward();
    }
    tape.clear();
}

}  // namespace wt
