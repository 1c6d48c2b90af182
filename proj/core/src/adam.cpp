#include "ssdrl/adam.h"

#include <cmath>

namespace ssdrl {

template <typename T>
template <typename F>
void Adam<T>::for_each_owned(ParamStore<T>& store, F&& f) {
  if (names_.empty()) {
    for (auto& [_, e] : store.entries()) f(e);
  } else {
    for (const auto& name : names_) f(store.entry(name));
  }
}

template <typename T>
bool Adam<T>::step(ParamStore<T>& store) {
  bool finite = true;
  for_each_owned(store, [&](ParamEntry<T>& e) { finite = finite && e.grad.all_finite(); });
  if (!finite) {
    for_each_owned(store, [](ParamEntry<T>& e) { e.grad.fill(T(0)); });
    return false;
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(steps_));
  const double c2 = 1.0 - std::pow(b2, double(steps_));
  const T lr = T(config_.lr);
  const T eps = T(config_.epsilon);
  const T tb1 = T(b1), tb2 = T(b2);
  const T inv_c1 = T(1.0 / c1), inv_c2 = T(1.0 / c2);
  for_each_owned(store, [&](ParamEntry<T>& e) {
    T* w = e.value.ptr();
    T* g = e.grad.ptr();
    T* m = e.moment1.ptr();
    T* v = e.moment2.ptr();
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      m[i] = tb1 * m[i] + (T(1) - tb1) * g[i];
      v[i] = tb2 * v[i] + (T(1) - tb2) * g[i] * g[i];
      const T mhat = m[i] * inv_c1;
      const T vhat = v[i] * inv_c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[i] = T(0);
    }
  });
  return true;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ssdrl
