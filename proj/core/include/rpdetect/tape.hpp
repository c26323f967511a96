#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rpdetect/tensor.hpp"

namespace rpdetect {

/// Reverse-mode recording for one training step. Operators append a backward
/// closure while a tape is active on the calling thread (see TapeScope) and at
/// least one operand requires a gradient. backward() replays the closures in
/// exact reverse order; gradients accumulate additively at fan-out points.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad leaf.
  /// The tape is consumed: recorded closures are released afterwards.
  void backward(Tensor loss);

  /// Tape active on this thread, or nullptr.
  static GradTape* active();

 private:
  friend class TapeScope;
  std::vector<BackwardFn> entries_;
};

/// Activates a tape on the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Suspends recording (e.g. for evaluation inside a training loop).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

/// Returns the active tape if any input requires a gradient, and marks `out`
/// as requiring one in that case. Operators use this to decide whether to record.
GradTape* tape_for(Tensor& out, std::initializer_list<const Tensor*> inputs);
GradTape* tape_for(Tensor& out, const std::vector<Tensor>& inputs);

/// Counts floating-point operations issued by operators on this thread while
/// in scope. Convention: 2 per multiply-add, 1 per bias add or elementwise op.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  double total() const { return total_; }

  static void add(double flops);

 private:
  FlopCounter* previous_;
  double total_ = 0.0;
};

}  // namespace rpdetect
