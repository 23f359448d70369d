#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace focta {

// Error taxonomy. The CLI maps config_error to exit code 2 and the
// others to exit code 3.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct graph_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Logical element width of a run. All arithmetic is carried out in double;
// in f32 mode every op output and parameter update is rounded through
// float, and byte accounting uses 4 bytes per element.
enum class ElemWidth { f32 = 4, f64 = 8 };

inline int width_bytes(ElemWidth w) { return static_cast<int>(w); }

inline double quantize(ElemWidth w, double v) {
    return w == ElemWidth::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major n-d value. Shapes use NHWC layout for rank-4 image
// tensors. A tensor's id within a tape is the id of the node that
// produced it (one output per node).
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw graph_error("tensor element count does not match shape " + shape_str(shape));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool is_scalar() const { return size() == 1; }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

// Narrow saved-for-backward payloads (ReLU masks, pool argmax offsets,
// entropy keep masks, L1 signs, class labels). Counted at 1 byte/element
// in the memory report.
struct ByteTensor {
    Shape shape;
    std::vector<uint8_t> data;

    ByteTensor() = default;
    explicit ByteTensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0) {}

    int64_t size() const { return static_cast<int64_t>(data.size()); }
};

bool all_finite(const Tensor& t);

// Deterministic RNG. Gaussian draws are hand-rolled Box-Muller over
// mt19937_64 so streams are pinned by the seed alone, independent of the
// standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0);

    // inclusive range
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stable child-seed derivation (splitmix64 over seed ^ tag).
uint64_t derive_seed(uint64_t seed, uint64_t tag);

}  // namespace focta
