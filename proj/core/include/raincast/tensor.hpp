#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "raincast/error.hpp"

namespace raincast {

// Dense 4-D shape, NHWC. Vectors live as [N,1,1,C], scalars as [1,1,1,1].
struct Shape {
  int n = 1, h = 1, w = 1, c = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * h * w * c;
  }
  bool operator==(const Shape&) const = default;

  std::size_t index(int in, int ih, int iw, int ic) const {
    return ((static_cast<std::size_t>(in) * h + ih) * w + iw) * c + ic;
  }

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(h) + "," +
           std::to_string(w) + "," + std::to_string(c) + "]";
  }
};

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

  T& at(int n, int h, int w, int c) { return data[shape.index(n, h, w, c)]; }
  T at(int n, int h, int w, int c) const { return data[shape.index(n, h, w, c)]; }

  std::size_t numel() const { return data.size(); }

  static Tensor scalar(T v) {
    Tensor t(Shape{1, 1, 1, 1});
    t.data[0] = v;
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) {
      out.data[i] = static_cast<U>(data[i]);
    }
    return out;
  }
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("tensor: " + what);
}

}  // namespace raincast
