#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

#include <Eigen/Core>

#include "ecgfuse/error.hpp"
#include "ecgfuse/onnx.hpp"

namespace ecgfuse::onnx {

namespace {

using Shape = std::vector<std::int64_t>;
using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void fail(const Node& node, const std::string& what) {
    throw Error(ErrorCode::ShapeMismatch, "onnx " + node.op_type + " '" + node.name + "': " + what);
}

std::int64_t product(const Shape& s, std::size_t from = 0, std::size_t to = std::string::npos) {
    to = std::min(to, s.size());
    std::int64_t p = 1;
    for (std::size_t i = from; i < to; ++i) p *= s[i];
    return p;
}

std::size_t norm_axis(std::int64_t axis, std::size_t rank, const Node& node) {
    const auto r = static_cast<std::int64_t>(rank);
    if (axis < -r || axis >= r) fail(node, "axis out of range");
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

Shape broadcast_shape(const Shape& a, const Shape& b, const Node& node) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) fail(node, "shapes do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` expanded to `rank` dims against an output shape, zero on broadcast dims.
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::int64_t> strides(out.size(), 0);
    std::int64_t stride = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t i = s.size() - 1 - k;
        const std::size_t o = out.size() - 1 - k;
        strides[o] = s[i] == 1 ? 0 : stride;
        stride *= s[i];
    }
    return strides;
}

template <typename T, typename Op>
std::vector<T> broadcast_apply(const std::vector<T>& a, const Shape& sa, const std::vector<T>& b,
                               const Shape& sb, const Shape& out, Op op) {
    const auto n = static_cast<std::size_t>(product(out));
    std::vector<T> result(n);
    if (sa == sb) {
        for (std::size_t i = 0; i < n; ++i) result[i] = op(a[i], b[i]);
        return result;
    }
    if (b.size() == 1) {
        for (std::size_t i = 0; i < n; ++i) result[i] = op(a[i], b[0]);
        return result;
    }
    const auto st_a = broadcast_strides(sa, out);
    const auto st_b = broadcast_strides(sb, out);
    std::vector<std::int64_t> idx(out.size(), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        result[i] = op(a[static_cast<std::size_t>(ia)], b[static_cast<std::size_t>(ib)]);
        for (std::size_t d = out.size(); d-- > 0;) {
            ++idx[d];
            ia += st_a[d];
            ib += st_b[d];
            if (idx[d] < out[d]) break;
            ia -= st_a[d] * out[d];
            ib -= st_b[d] * out[d];
            idx[d] = 0;
        }
    }
    return result;
}

Tensor binary(const Node& node, const Tensor& a, const Tensor& b) {
    const Shape out = broadcast_shape(a.shape, b.shape, node);
    const std::string& op = node.op_type;
    if (a.is_int && b.is_int) {
        std::function<std::int64_t(std::int64_t, std::int64_t)> f;
        if (op == "Add") f = std::plus<>{};
        else if (op == "Sub") f = std::minus<>{};
        else if (op == "Mul") f = std::multiplies<>{};
        else f = [&](std::int64_t x, std::int64_t y) {
            if (y == 0) fail(node, "integer division by zero");
            return x / y;
        };
        return Tensor::int64s(out, broadcast_apply(a.ints, a.shape, b.ints, b.shape, out, f));
    }
    if (a.is_int != b.is_int) fail(node, "mixed integer and float operands");
    std::vector<float> r;
    if (op == "Add") r = broadcast_apply(a.data, a.shape, b.data, b.shape, out, std::plus<float>{});
    else if (op == "Sub") r = broadcast_apply(a.data, a.shape, b.data, b.shape, out, std::minus<float>{});
    else if (op == "Mul") r = broadcast_apply(a.data, a.shape, b.data, b.shape, out, std::multiplies<float>{});
    else r = broadcast_apply(a.data, a.shape, b.data, b.shape, out, std::divides<float>{});
    return Tensor::floats(out, std::move(r));
}

Tensor unary(const Tensor& x, const std::function<float(float)>& f) {
    Tensor y = Tensor::floats(x.shape, x.data);
    for (float& v : y.data) v = f(v);
    return y;
}

struct Window2d {
    std::int64_t kh, kw, sh, sw, dh, dw, pt, pl, pb, pr;
};

Window2d window_params(const Node& node, std::int64_t kh, std::int64_t kw, std::int64_t in_h,
                       std::int64_t in_w) {
    Window2d w{kh, kw, 1, 1, 1, 1, 0, 0, 0, 0};
    if (auto s = node.attr_ints("strides"); s.size() == 2) {
        w.sh = s[0];
        w.sw = s[1];
    }
    if (auto d = node.attr_ints("dilations"); d.size() == 2) {
        w.dh = d[0];
        w.dw = d[1];
    }
    const std::string auto_pad = node.attr_string("auto_pad", "NOTSET");
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
        auto same = [&](std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d) {
            const std::int64_t out = (in + s - 1) / s;
            return std::max<std::int64_t>(0, (out - 1) * s + (k - 1) * d + 1 - in);
        };
        const auto th = same(in_h, kh, w.sh, w.dh);
        const auto tw = same(in_w, kw, w.sw, w.dw);
        const bool upper = auto_pad == "SAME_UPPER";
        w.pt = upper ? th / 2 : th - th / 2;
        w.pb = th - w.pt;
        w.pl = upper ? tw / 2 : tw - tw / 2;
        w.pr = tw - w.pl;
    } else if (auto_pad == "NOTSET") {
        if (auto p = node.attr_ints("pads"); p.size() == 4) {
            w.pt = p[0];
            w.pl = p[1];
            w.pb = p[2];
            w.pr = p[3];
        } else if (!p.empty()) {
            fail(node, "only 2-D spatial pads are supported");
        }
    } else if (auto_pad != "VALID") {
        fail(node, "unknown auto_pad " + auto_pad);
    }
    return w;
}

std::int64_t pooled_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d,
                           std::int64_t pad_begin, std::int64_t pad_end, bool ceil_mode) {
    const std::int64_t span = in + pad_begin + pad_end - ((k - 1) * d + 1);
    std::int64_t out = (ceil_mode ? (span + s - 1) / s : span / s) + 1;
    // a window may not start inside the trailing padding
    if (ceil_mode && (out - 1) * s >= in + pad_begin) --out;
    return out;
}

Tensor conv(const Node& node, const Tensor& x, const Tensor& weight, const Tensor* bias) {
    if (x.shape.size() != 4 || weight.shape.size() != 4) fail(node, "only 2-D convolution is supported");
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::int64_t m = weight.shape[0], cg = weight.shape[1];
    const std::int64_t group = node.attr_int("group", 1);
    if (cg * group != c || m % group != 0) fail(node, "channel/group mismatch");
    const Window2d p = window_params(node, weight.shape[2], weight.shape[3], h, wd);
    const std::int64_t oh = pooled_extent(h, p.kh, p.sh, p.dh, p.pt, p.pb, false);
    const std::int64_t ow = pooled_extent(wd, p.kw, p.sw, p.dw, p.pl, p.pr, false);
    if (oh <= 0 || ow <= 0) fail(node, "empty output");
    const std::int64_t mg = m / group;
    const std::int64_t patch = cg * p.kh * p.kw;

    Tensor y = Tensor::floats({n, m, oh, ow}, std::vector<float>(static_cast<std::size_t>(n * m * oh * ow), 0.0f));
    RowMajor col(patch, oh * ow);
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t g = 0; g < group; ++g) {
            for (std::int64_t ci = 0; ci < cg; ++ci) {
                const float* plane = x.data.data() + ((b * c + g * cg + ci) * h) * wd;
                for (std::int64_t ky = 0; ky < p.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < p.kw; ++kx) {
                        float* row = col.data() + ((ci * p.kh + ky) * p.kw + kx) * oh * ow;
                        for (std::int64_t oy = 0; oy < oh; ++oy) {
                            const std::int64_t iy = oy * p.sh - p.pt + ky * p.dh;
                            for (std::int64_t ox = 0; ox < ow; ++ox) {
                                const std::int64_t ix = ox * p.sw - p.pl + kx * p.dw;
                                row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < wd) ? plane[iy * wd + ix] : 0.0f;
                            }
                        }
                    }
                }
            }
            Eigen::Map<const RowMajor> wmat(weight.data.data() + g * mg * patch, mg, patch);
            Eigen::Map<RowMajor> out(y.data.data() + ((b * m + g * mg) * oh) * ow, mg, oh * ow);
            out.noalias() = wmat * col;
        }
        if (bias) {
            for (std::int64_t o = 0; o < m; ++o) {
                float* plane = y.data.data() + ((b * m + o) * oh) * ow;
                const float bv = bias->data[static_cast<std::size_t>(o)];
                for (std::int64_t i = 0; i < oh * ow; ++i) plane[i] += bv;
            }
        }
    }
    return y;
}

Tensor pool(const Node& node, const Tensor& x, bool is_max) {
    if (x.shape.size() != 4) fail(node, "only 2-D pooling is supported");
    const auto k = node.attr_ints("kernel_shape");
    if (k.size() != 2) fail(node, "kernel_shape must have two entries");
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const Window2d p = window_params(node, k[0], k[1], h, wd);
    const bool ceil_mode = node.attr_int("ceil_mode", 0) != 0;
    const bool include_pad = node.attr_int("count_include_pad", 0) != 0;
    const std::int64_t oh = pooled_extent(h, p.kh, p.sh, p.dh, p.pt, p.pb, ceil_mode);
    const std::int64_t ow = pooled_extent(wd, p.kw, p.sw, p.dw, p.pl, p.pr, ceil_mode);
    Tensor y = Tensor::floats({n, c, oh, ow}, std::vector<float>(static_cast<std::size_t>(n * c * oh * ow)));
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const float* in = x.data.data() + plane * h * wd;
        float* out = y.data.data() + plane * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                double sum = 0.0;
                std::int64_t valid = 0, padded = 0;
                for (std::int64_t ky = 0; ky < p.kh; ++ky) {
                    const std::int64_t iy = oy * p.sh - p.pt + ky * p.dh;
                    for (std::int64_t kx = 0; kx < p.kw; ++kx) {
                        const std::int64_t ix = ox * p.sw - p.pl + kx * p.dw;
                        if (iy >= -p.pt && iy < h + p.pb && ix >= -p.pl && ix < wd + p.pr) ++padded;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                        const float v = in[iy * wd + ix];
                        best = std::max(best, v);
                        sum += v;
                        ++valid;
                    }
                }
                if (is_max) {
                    out[oy * ow + ox] = best;
                } else {
                    const std::int64_t count = include_pad ? padded : valid;
                    out[oy * ow + ox] = count > 0 ? static_cast<float>(sum / static_cast<double>(count)) : 0.0f;
                }
            }
        }
    }
    return y;
}

Tensor global_pool(const Tensor& x, bool is_max) {
    const std::int64_t n = x.shape[0], c = x.shape[1];
    const std::int64_t spatial = product(x.shape, 2);
    Shape out_shape = x.shape;
    for (std::size_t i = 2; i < out_shape.size(); ++i) out_shape[i] = 1;
    Tensor y = Tensor::floats(out_shape, std::vector<float>(static_cast<std::size_t>(n * c)));
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const float* in = x.data.data() + plane * spatial;
        if (is_max) {
            y.data[static_cast<std::size_t>(plane)] = *std::max_element(in, in + spatial);
        } else {
            double sum = 0.0;
            for (std::int64_t i = 0; i < spatial; ++i) sum += in[i];
            y.data[static_cast<std::size_t>(plane)] = static_cast<float>(sum / static_cast<double>(spatial));
        }
    }
    return y;
}

Tensor reduce_mean(const Node& node, const Tensor& x, std::vector<std::int64_t> axes) {
    const bool keep = node.attr_int("keepdims", 1) != 0;
    std::set<std::size_t> reduce;
    if (axes.empty()) {
        if (node.attr_int("noop_with_empty_axes", 0) != 0) return x;
        for (std::size_t i = 0; i < x.shape.size(); ++i) reduce.insert(i);
    }
    for (auto a : axes) reduce.insert(norm_axis(a, x.shape.size(), node));
    Shape kept_shape = x.shape;
    for (auto a : reduce) kept_shape[a] = 1;
    const auto out_n = static_cast<std::size_t>(product(kept_shape));
    std::vector<double> acc(out_n, 0.0);
    const auto st = broadcast_strides(kept_shape, x.shape);
    std::vector<std::int64_t> idx(x.shape.size(), 0);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        std::int64_t o = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) o += idx[d] * st[d];
        acc[static_cast<std::size_t>(o)] += x.data[i];
        for (std::size_t d = idx.size(); d-- > 0;) {
            if (++idx[d] < x.shape[d]) break;
            idx[d] = 0;
        }
    }
    const double count = static_cast<double>(x.data.size()) / static_cast<double>(out_n);
    std::vector<float> values(out_n);
    for (std::size_t i = 0; i < out_n; ++i) values[i] = static_cast<float>(acc[i] / count);
    Shape out_shape;
    for (std::size_t d = 0; d < x.shape.size(); ++d) {
        if (!reduce.contains(d)) out_shape.push_back(x.shape[d]);
        else if (keep) out_shape.push_back(1);
    }
    return Tensor::floats(out_shape, std::move(values));
}

Tensor concat(const Node& node, const std::vector<const Tensor*>& parts) {
    const Tensor& first = *parts.front();
    const std::size_t axis = norm_axis(node.attr_int("axis", 0), first.shape.size(), node);
    Shape out_shape = first.shape;
    out_shape[axis] = 0;
    for (const Tensor* t : parts) {
        if (t->shape.size() != first.shape.size() || t->is_int != first.is_int) fail(node, "incompatible inputs");
        for (std::size_t d = 0; d < out_shape.size(); ++d) {
            if (d != axis && t->shape[d] != first.shape[d]) fail(node, "incompatible inputs");
        }
        out_shape[axis] += t->shape[axis];
    }
    const std::int64_t outer = product(out_shape, 0, axis);
    const std::int64_t inner = product(out_shape, axis + 1);
    Tensor y;
    y.shape = out_shape;
    y.is_int = first.is_int;
    for (std::int64_t o = 0; o < outer; ++o) {
        for (const Tensor* t : parts) {
            const std::int64_t chunk = t->shape[axis] * inner;
            if (t->is_int) {
                y.ints.insert(y.ints.end(), t->ints.begin() + o * chunk, t->ints.begin() + (o + 1) * chunk);
            } else {
                y.data.insert(y.data.end(), t->data.begin() + o * chunk, t->data.begin() + (o + 1) * chunk);
            }
        }
    }
    return y;
}

Tensor with_shape(const Tensor& x, Shape shape) {
    Tensor y = x;
    y.shape = std::move(shape);
    return y;
}

Tensor gemm(const Node& node, const Tensor& a, const Tensor& b, const Tensor* c) {
    if (a.shape.size() != 2 || b.shape.size() != 2) fail(node, "operands must be 2-D");
    const bool ta = node.attr_int("transA", 0) != 0;
    const bool tb = node.attr_int("transB", 0) != 0;
    const float alpha = node.attr_float("alpha", 1.0f);
    const float beta = node.attr_float("beta", 1.0f);
    Eigen::Map<const RowMajor> am(a.data.data(), a.shape[0], a.shape[1]);
    Eigen::Map<const RowMajor> bm(b.data.data(), b.shape[0], b.shape[1]);
    RowMajor out;
    if (ta && tb) out = am.transpose() * bm.transpose();
    else if (ta) out = am.transpose() * bm;
    else if (tb) out = am * bm.transpose();
    else {
        if (a.shape[1] != b.shape[0]) fail(node, "inner dimensions differ");
        out = am * bm;
    }
    out *= alpha;
    Tensor y = Tensor::floats({out.rows(), out.cols()}, std::vector<float>(out.data(), out.data() + out.size()));
    if (c) {
        Tensor scaled = Tensor::floats(c->shape, c->data);
        for (float& v : scaled.data) v *= beta;
        Node add = node;
        add.op_type = "Add";
        y = binary(add, y, scaled);
    }
    return y;
}

Tensor matmul(const Node& node, const Tensor& a, const Tensor& b) {
    if (b.shape.size() != 2 || a.shape.size() < 2) fail(node, "only [..., K] x [K, N] is supported");
    const std::int64_t k = a.shape.back();
    if (b.shape[0] != k) fail(node, "inner dimensions differ");
    const std::int64_t rows = product(a.shape, 0, a.shape.size() - 1);
    Eigen::Map<const RowMajor> am(a.data.data(), rows, k);
    Eigen::Map<const RowMajor> bm(b.data.data(), k, b.shape[1]);
    RowMajor out = am * bm;
    Shape shape = a.shape;
    shape.back() = b.shape[1];
    return Tensor::floats(shape, std::vector<float>(out.data(), out.data() + out.size()));
}

Tensor batch_norm(const Node& node, const Tensor& x, const Tensor& scale, const Tensor& bias,
                  const Tensor& mean, const Tensor& var) {
    const float eps = node.attr_float("epsilon", 1e-5f);
    const std::int64_t n = x.shape[0], c = x.shape[1];
    const std::int64_t inner = product(x.shape, 2);
    Tensor y = Tensor::floats(x.shape, x.data);
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const auto i = static_cast<std::size_t>(ch);
            const float s = scale.data[i] / std::sqrt(var.data[i] + eps);
            const float shift = bias.data[i] - mean.data[i] * s;
            float* p = y.data.data() + (b * c + ch) * inner;
            for (std::int64_t j = 0; j < inner; ++j) p[j] = p[j] * s + shift;
        }
    }
    return y;
}

Tensor pad(const Node& node, const Tensor& x, std::vector<std::int64_t> pads, float value) {
    if (node.attr_string("mode", "constant") != "constant") fail(node, "only constant padding is supported");
    const std::size_t rank = x.shape.size();
    if (pads.size() != 2 * rank) fail(node, "pads length must be twice the rank");
    Shape out_shape(rank);
    for (std::size_t d = 0; d < rank; ++d) out_shape[d] = x.shape[d] + pads[d] + pads[d + rank];
    Tensor y = Tensor::floats(out_shape, std::vector<float>(static_cast<std::size_t>(product(out_shape)), value));
    std::vector<std::int64_t> idx(rank, 0);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        std::int64_t o = 0;
        bool inside = true;
        for (std::size_t d = 0; d < rank; ++d) {
            const std::int64_t od = idx[d] + pads[d];
            if (od < 0 || od >= out_shape[d]) inside = false;
            o = o * out_shape[d] + od;
        }
        if (inside) y.data[static_cast<std::size_t>(o)] = x.data[i];
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < x.shape[d]) break;
            idx[d] = 0;
        }
    }
    return y;
}

Tensor gather(const Node& node, const Tensor& data, const Tensor& indices) {
    const std::size_t axis = norm_axis(node.attr_int("axis", 0), data.shape.size(), node);
    const std::int64_t outer = product(data.shape, 0, axis);
    const std::int64_t extent = data.shape[axis];
    const std::int64_t inner = product(data.shape, axis + 1);
    Shape out_shape(data.shape.begin(), data.shape.begin() + static_cast<std::ptrdiff_t>(axis));
    out_shape.insert(out_shape.end(), indices.shape.begin(), indices.shape.end());
    out_shape.insert(out_shape.end(), data.shape.begin() + static_cast<std::ptrdiff_t>(axis) + 1, data.shape.end());
    Tensor y;
    y.shape = out_shape;
    y.is_int = data.is_int;
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t raw : indices.ints) {
            const std::int64_t at = raw < 0 ? raw + extent : raw;
            if (at < 0 || at >= extent) fail(node, "index out of range");
            const std::int64_t start = (o * extent + at) * inner;
            if (data.is_int) {
                y.ints.insert(y.ints.end(), data.ints.begin() + start, data.ints.begin() + start + inner);
            } else {
                y.data.insert(y.data.end(), data.data.begin() + start, data.data.begin() + start + inner);
            }
        }
    }
    return y;
}

Tensor cast(const Node& node, const Tensor& x) {
    const auto to = static_cast<DataType>(node.attr_int("to", 1));
    if (to == DataType::Float || to == DataType::Double) {
        if (!x.is_int) return x;
        std::vector<float> v(x.ints.begin(), x.ints.end());
        return Tensor::floats(x.shape, std::move(v));
    }
    if (to == DataType::Int64 || to == DataType::Int32) {
        if (x.is_int) return x;
        std::vector<std::int64_t> v;
        for (float f : x.data) v.push_back(static_cast<std::int64_t>(f));
        return Tensor::int64s(x.shape, std::move(v));
    }
    fail(node, "unsupported cast target");
}

// Builds a tensor of `out_shape` where output element i copies source element src(index).
template <typename Src>
Tensor gather_elements(const Tensor& x, const Shape& out_shape, Src src) {
    Tensor y;
    y.shape = out_shape;
    y.is_int = x.is_int;
    const auto n = static_cast<std::size_t>(product(out_shape));
    if (x.is_int) y.ints.resize(n); else y.data.resize(n);
    std::vector<std::int64_t> idx(out_shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto from = static_cast<std::size_t>(src(idx));
        if (x.is_int) y.ints[i] = x.ints[from]; else y.data[i] = x.data[from];
        for (std::size_t d = out_shape.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return y;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
    return st;
}

Tensor transpose(const Node& node, const Tensor& x) {
    const std::size_t rank = x.shape.size();
    auto perm = node.attr_ints("perm");
    if (perm.empty()) {
        for (std::size_t d = rank; d-- > 0;) perm.push_back(static_cast<std::int64_t>(d));
    }
    if (perm.size() != rank) fail(node, "perm rank differs from input rank");
    Shape out(rank);
    std::vector<std::size_t> from(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        from[d] = norm_axis(perm[d], rank, node);
        out[d] = x.shape[from[d]];
    }
    const auto st = strides_of(x.shape);
    return gather_elements(x, out, [&](const std::vector<std::int64_t>& idx) {
        std::int64_t at = 0;
        for (std::size_t d = 0; d < rank; ++d) at += idx[d] * st[from[d]];
        return at;
    });
}

Tensor slice(const Node& node, const Tensor& x, const std::vector<std::int64_t>& starts,
             const std::vector<std::int64_t>& ends, std::vector<std::int64_t> axes,
             std::vector<std::int64_t> steps) {
    const std::size_t rank = x.shape.size();
    if (axes.empty()) {
        for (std::size_t d = 0; d < starts.size(); ++d) axes.push_back(static_cast<std::int64_t>(d));
    }
    if (steps.empty()) steps.assign(starts.size(), 1);
    if (ends.size() != starts.size() || axes.size() != starts.size() || steps.size() != starts.size()) {
        fail(node, "starts, ends, axes and steps differ in length");
    }
    std::vector<std::int64_t> first(rank, 0), step(rank, 1);
    Shape out = x.shape;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        const std::size_t d = norm_axis(axes[k], rank, node);
        const std::int64_t dim = x.shape[d];
        const std::int64_t st = steps[k];
        if (st == 0) fail(node, "zero step");
        std::int64_t b = starts[k], e = ends[k];
        if (b < 0) b += dim;
        if (e < 0) e += dim;
        if (st > 0) {
            b = std::clamp<std::int64_t>(b, 0, dim);
            e = std::clamp<std::int64_t>(e, 0, dim);
            out[d] = e > b ? (e - b + st - 1) / st : 0;
        } else {
            b = std::clamp<std::int64_t>(b, -1, dim - 1);
            e = std::clamp<std::int64_t>(e, -1, dim - 1);
            out[d] = b > e ? (b - e - st - 1) / -st : 0;
        }
        first[d] = b;
        step[d] = st;
    }
    const auto st = strides_of(x.shape);
    return gather_elements(x, out, [&](const std::vector<std::int64_t>& idx) {
        std::int64_t at = 0;
        for (std::size_t d = 0; d < rank; ++d) at += (first[d] + idx[d] * step[d]) * st[d];
        return at;
    });
}

Tensor constant_of_shape(const Node& node, const Tensor& shape) {
    if (!shape.is_int) fail(node, "shape must be an integer tensor");
    const auto n = static_cast<std::size_t>(product(shape.ints));
    if (const auto* a = node.attr("value"); a && a->t) {
        const Tensor& v = *a->t;
        if (v.is_int) return Tensor::int64s(shape.ints, std::vector<std::int64_t>(n, v.ints.at(0)));
        return Tensor::floats(shape.ints, std::vector<float>(n, v.data.at(0)));
    }
    return Tensor::floats(shape.ints, std::vector<float>(n, 0.0f));
}

Tensor constant(const Node& node) {
    if (const auto* a = node.attr("value"); a && a->t) return *a->t;
    if (const auto* a = node.attr("value_float")) return Tensor::floats({}, {a->f});
    if (const auto* a = node.attr("value_floats")) return Tensor::floats({static_cast<std::int64_t>(a->floats.size())}, a->floats);
    if (const auto* a = node.attr("value_int")) return Tensor::int64s({}, {a->i});
    if (const auto* a = node.attr("value_ints")) return Tensor::int64s({static_cast<std::int64_t>(a->ints.size())}, a->ints);
    fail(node, "unsupported constant payload");
}

const std::set<std::string>& supported_ops() {
    static const std::set<std::string> ops = {
        "Add", "AveragePool", "BatchNormalization", "Cast", "Clip", "Concat", "Constant", "ConstantOfShape", "Conv",
        "Div", "Dropout", "Flatten", "Gather", "Gemm", "GlobalAveragePool", "GlobalMaxPool",
        "HardSigmoid", "HardSwish", "Identity", "MatMul", "MaxPool", "Mul", "Pad", "ReduceMean",
        "Relu", "Reshape", "Shape", "Sigmoid", "Slice", "Squeeze", "Sub", "Tanh", "Transpose", "Unsqueeze"};
    return ops;
}

}  // namespace

bool is_supported_op(const std::string& op_type) { return supported_ops().contains(op_type); }

Session::Session(Graph graph, std::vector<std::string> outputs)
    : graph_(std::move(graph)), outputs_(std::move(outputs)) {
    schedule_ = plan(graph_, outputs_);
}

std::map<std::string, Tensor> Session::run(const std::map<std::string, Tensor>& feeds) const {
    std::map<std::string, Tensor> values;
    auto get = [&](const std::string& name) -> const Tensor& {
        if (auto it = values.find(name); it != values.end()) return it->second;
        if (auto it = feeds.find(name); it != feeds.end()) return it->second;
        if (auto it = graph_.initializers.find(name); it != graph_.initializers.end()) return it->second;
        throw Error(ErrorCode::ShapeMismatch, "onnx: value '" + name + "' is not available");
    };
    auto opt = [&](const Node& node, std::size_t i) -> const Tensor* {
        return i < node.inputs.size() && !node.inputs[i].empty() ? &get(node.inputs[i]) : nullptr;
    };
    auto ints_input = [&](const Node& node, std::size_t i, const std::string& attr_name) {
        if (const Tensor* t = opt(node, i)) {
            if (!t->is_int) fail(node, "expected an integer tensor");
            return t->ints;
        }
        return node.attr_ints(attr_name);
    };

    for (const Node* np : schedule_) {
        const Node& node = *np;
        const std::string& op = node.op_type;
        Tensor y;
        if (op == "Conv") {
            y = conv(node, get(node.inputs[0]), get(node.inputs[1]), opt(node, 2));
        } else if (op == "BatchNormalization") {
            y = batch_norm(node, get(node.inputs[0]), get(node.inputs[1]), get(node.inputs[2]),
                           get(node.inputs[3]), get(node.inputs[4]));
        } else if (op == "Relu") {
            y = unary(get(node.inputs[0]), [](float v) { return v > 0.0f ? v : 0.0f; });
        } else if (op == "Sigmoid") {
            y = unary(get(node.inputs[0]), [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
        } else if (op == "Tanh") {
            y = unary(get(node.inputs[0]), [](float v) { return std::tanh(v); });
        } else if (op == "HardSigmoid") {
            const float alpha = node.attr_float("alpha", 0.2f), beta = node.attr_float("beta", 0.5f);
            y = unary(get(node.inputs[0]), [=](float v) { return std::clamp(alpha * v + beta, 0.0f, 1.0f); });
        } else if (op == "HardSwish") {
            y = unary(get(node.inputs[0]), [](float v) { return v * std::clamp(v / 6.0f + 0.5f, 0.0f, 1.0f); });
        } else if (op == "Clip") {
            float lo = node.attr_float("min", -std::numeric_limits<float>::infinity());
            float hi = node.attr_float("max", std::numeric_limits<float>::infinity());
            if (const Tensor* t = opt(node, 1)) lo = t->data.at(0);
            if (const Tensor* t = opt(node, 2)) hi = t->data.at(0);
            y = unary(get(node.inputs[0]), [=](float v) { return std::clamp(v, lo, hi); });
        } else if (op == "Add" || op == "Sub" || op == "Mul" || op == "Div") {
            y = binary(node, get(node.inputs[0]), get(node.inputs[1]));
        } else if (op == "MaxPool" || op == "AveragePool") {
            y = pool(node, get(node.inputs[0]), op == "MaxPool");
        } else if (op == "GlobalAveragePool" || op == "GlobalMaxPool") {
            y = global_pool(get(node.inputs[0]), op == "GlobalMaxPool");
        } else if (op == "ReduceMean") {
            y = reduce_mean(node, get(node.inputs[0]), ints_input(node, 1, "axes"));
        } else if (op == "Concat") {
            std::vector<const Tensor*> parts;
            for (const auto& in : node.inputs) parts.push_back(&get(in));
            y = concat(node, parts);
        } else if (op == "Flatten") {
            const Tensor& x = get(node.inputs[0]);
            const std::size_t axis = node.attr_int("axis", 1) == static_cast<std::int64_t>(x.shape.size())
                                         ? x.shape.size()
                                         : norm_axis(node.attr_int("axis", 1), x.shape.size(), node);
            y = with_shape(x, {product(x.shape, 0, axis), product(x.shape, axis)});
        } else if (op == "Reshape") {
            const Tensor& x = get(node.inputs[0]);
            Shape target = get(node.inputs[1]).ints;
            const bool allow_zero = node.attr_int("allowzero", 0) != 0;
            std::int64_t known = 1;
            int infer = -1;
            for (std::size_t i = 0; i < target.size(); ++i) {
                if (target[i] == 0 && !allow_zero) target[i] = x.shape.at(i);
                if (target[i] == -1) {
                    infer = static_cast<int>(i);
                } else {
                    known *= target[i];
                }
            }
            const auto total = static_cast<std::int64_t>(x.numel());
            if (infer >= 0) target[static_cast<std::size_t>(infer)] = known ? total / known : 0;
            if (product(target) != total) fail(node, "element count changes");
            y = with_shape(x, target);
        } else if (op == "Gemm") {
            y = gemm(node, get(node.inputs[0]), get(node.inputs[1]), opt(node, 2));
        } else if (op == "MatMul") {
            y = matmul(node, get(node.inputs[0]), get(node.inputs[1]));
        } else if (op == "Identity" || op == "Dropout") {
            y = get(node.inputs[0]);
        } else if (op == "Constant") {
            y = constant(node);
        } else if (op == "ConstantOfShape") {
            y = constant_of_shape(node, get(node.inputs[0]));
        } else if (op == "Transpose") {
            y = transpose(node, get(node.inputs[0]));
        } else if (op == "Slice") {
            y = slice(node, get(node.inputs[0]), ints_input(node, 1, "starts"), ints_input(node, 2, "ends"),
                      ints_input(node, 3, "axes"), ints_input(node, 4, "steps"));
        } else if (op == "Shape") {
            const Shape& s = get(node.inputs[0]).shape;
            const auto rank = static_cast<std::int64_t>(s.size());
            std::int64_t start = node.attr_int("start", 0), end = node.attr_int("end", rank);
            if (start < 0) start += rank;
            if (end < 0) end += rank;
            start = std::clamp<std::int64_t>(start, 0, rank);
            end = std::clamp<std::int64_t>(end, start, rank);
            y = Tensor::int64s({end - start}, Shape(s.begin() + start, s.begin() + end));
        } else if (op == "Gather") {
            y = gather(node, get(node.inputs[0]), get(node.inputs[1]));
        } else if (op == "Unsqueeze") {
            const Tensor& x = get(node.inputs[0]);
            auto axes = ints_input(node, 1, "axes");
            const std::size_t rank = x.shape.size() + axes.size();
            std::set<std::size_t> at;
            for (auto a : axes) at.insert(norm_axis(a, rank, node));
            Shape s;
            std::size_t src = 0;
            for (std::size_t d = 0; d < rank; ++d) s.push_back(at.contains(d) ? 1 : x.shape[src++]);
            y = with_shape(x, s);
        } else if (op == "Squeeze") {
            const Tensor& x = get(node.inputs[0]);
            auto axes = ints_input(node, 1, "axes");
            std::set<std::size_t> drop;
            for (auto a : axes) drop.insert(norm_axis(a, x.shape.size(), node));
            Shape s;
            for (std::size_t d = 0; d < x.shape.size(); ++d) {
                const bool remove = axes.empty() ? x.shape[d] == 1 : drop.contains(d);
                if (!remove) s.push_back(x.shape[d]);
            }
            y = with_shape(x, s);
        } else if (op == "Cast") {
            y = cast(node, get(node.inputs[0]));
        } else if (op == "Pad") {
            const Tensor& x = get(node.inputs[0]);
            float value = node.attr_float("value", 0.0f);
            if (const Tensor* t = opt(node, 2)) value = t->data.at(0);
            y = pad(node, x, ints_input(node, 1, "pads"), value);
        } else {
            fail(node, "operator is not supported");
        }
        values[node.outputs.at(0)] = std::move(y);
    }

    std::map<std::string, Tensor> result;
    for (const auto& name : outputs_) result[name] = get(name);
    return result;
}

}  // namespace ecgfuse::onnx
