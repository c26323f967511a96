#include "rpdetect/tape.hpp"

#include "rpdetect/error.hpp"

namespace rpdetect {

namespace {
thread_local GradTape* active_tape = nullptr;
thread_local FlopCounter* active_counter = nullptr;
}  // namespace

void GradTape::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("(undefined)")));
  }
  if (entries_.empty()) throw StateError("backward on an empty tape");
  loss.mutable_grad()[0] += 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

GradTape* GradTape::active() { return active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(active_tape) { active_tape = &tape; }
TapeScope::~TapeScope() { active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(active_tape) { active_tape = nullptr; }
NoGradScope::~NoGradScope() { active_tape = previous_; }

GradTape* tape_for(Tensor& out, std::initializer_list<const Tensor*> inputs) {
  if (active_tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) {
      out.set_requires_grad(true);
      return active_tape;
    }
  }
  return nullptr;
}

GradTape* tape_for(Tensor& out, const std::vector<Tensor>& inputs) {
  if (active_tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) {
      out.set_requires_grad(true);
      return active_tape;
    }
  }
  return nullptr;
}

FlopCounter::FlopCounter() : previous_(active_counter) { active_counter = this; }
FlopCounter::~FlopCounter() { active_counter = previous_; }

void FlopCounter::add(double flops) {
  if (active_counter != nullptr) active_counter->total_ += flops;
}

}  // namespace rpdetect
