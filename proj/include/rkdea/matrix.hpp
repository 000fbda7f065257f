#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <thread>
#include <vector>

#include "rkdea/errors.hpp"

namespace rkdea {

// Row-major dense matrix. Instantiated with double for tests and gradient
// checks, float for 32-bit training runs.
template <typename T>
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

    static DenseMatrix zeros(std::size_t rows, std::size_t cols) { return DenseMatrix(rows, cols); }

    static DenseMatrix constant(std::size_t rows, std::size_t cols, T v) {
        DenseMatrix m(rows, cols);
        std::fill(m.data_.begin(), m.data_.end(), v);
        return m;
    }

    static DenseMatrix ones(std::size_t rows, std::size_t cols) { return constant(rows, cols, T{1}); }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    T* row(std::size_t r) { return data_.data() + r * cols_; }
    const T* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    DenseMatrix transposed() const {
        DenseMatrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    template <typename U>
    DenseMatrix<U> cast() const {
        DenseMatrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const DenseMatrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<T> data_;
};

namespace detail {

// Splits [0, rows) into contiguous chunks, one worker per chunk. Each output
// row is produced by exactly one worker with the same inner loop order as the
// single-threaded path, so results are bitwise identical for any thread count.
template <typename Fn>
void parallel_rows(std::size_t rows, int threads, Fn&& fn) {
    if (threads <= 1 || rows < 64) {
        fn(std::size_t{0}, rows);
        return;
    }
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(threads), rows);
    const std::size_t chunk = (rows + n - 1) / n;
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(rows, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

// out (+)= a * b
template <typename T>
void matmul_into(const DenseMatrix<T>& a, const DenseMatrix<T>& b, DenseMatrix<T>& out,
                 bool accumulate, int threads = 1) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + ")");
    if (out.rows() != a.rows() || out.cols() != b.cols()) out = DenseMatrix<T>(a.rows(), b.cols());
    const std::size_t k = a.cols(), n = b.cols();
    detail::parallel_rows(a.rows(), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            T* dst = out.row(i);
            if (!accumulate) std::fill(dst, dst + n, T{0});
            const T* ar = a.row(i);
            for (std::size_t p = 0; p < k; ++p) {
                const T av = ar[p];
                const T* br = b.row(p);
                for (std::size_t j = 0; j < n; ++j) dst[j] += av * br[j];
            }
        }
    });
}

// out (+)= a * b^T
template <typename T>
void matmul_nt_into(const DenseMatrix<T>& a, const DenseMatrix<T>& b, DenseMatrix<T>& out,
                    bool accumulate, int threads = 1) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    if (out.rows() != a.rows() || out.cols() != b.rows()) out = DenseMatrix<T>(a.rows(), b.rows());
    const std::size_t k = a.cols(), n = b.rows();
    detail::parallel_rows(a.rows(), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            T* dst = out.row(i);
            const T* ar = a.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const T* br = b.row(j);
                T acc = accumulate ? dst[j] : T{0};
                for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
                dst[j] = acc;
            }
        }
    });
}

// out (+)= a^T * b
template <typename T>
void matmul_tn_into(const DenseMatrix<T>& a, const DenseMatrix<T>& b, DenseMatrix<T>& out,
                    bool accumulate, int threads = 1) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions differ");
    if (out.rows() != a.cols() || out.cols() != b.cols()) out = DenseMatrix<T>(a.cols(), b.cols());
    const std::size_t m = a.rows(), n = b.cols();
    if (!accumulate) std::fill(out.data().begin(), out.data().end(), T{0});
    // a^T*b walks a and b row by row; row-parallelism would race on out, so this
    // kernel stays sequential. It only sees d x d operands in practice.
    (void)threads;
    for (std::size_t p = 0; p < m; ++p) {
        const T* ar = a.row(p);
        const T* br = b.row(p);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const T av = ar[i];
            T* dst = out.row(i);
            for (std::size_t j = 0; j < n; ++j) dst[j] += av * br[j];
        }
    }
}

template <typename T>
DenseMatrix<T> matmul(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    DenseMatrix<T> out;
    matmul_into(a, b, out, false);
    return out;
}

// Compressed sparse rows with an eagerly built transpose, so both S*D and
// S^T*D run as row-major passes. Values are constants (never trained).
template <typename T>
class SparseMatrix {
public:
    struct Entry {
        std::size_t row, col;
        T value;
    };

    SparseMatrix() = default;

    static SparseMatrix from_coo(std::size_t rows, std::size_t cols, std::vector<Entry> entries) {
        for (const Entry& e : entries) {
            if (e.row >= rows || e.col >= cols)
                throw ShapeError("SparseMatrix: entry (" + std::to_string(e.row) + "," +
                                 std::to_string(e.col) + ") outside " + std::to_string(rows) + "x" +
                                 std::to_string(cols));
            if (!std::isfinite(static_cast<double>(e.value)))
                throw NumericError("SparseMatrix: non-finite entry value");
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        for (std::size_t i = 1; i < entries.size(); ++i)
            if (entries[i].row == entries[i - 1].row && entries[i].col == entries[i - 1].col)
                throw IntegrityError("SparseMatrix: duplicate entry at (" +
                                     std::to_string(entries[i].row) + "," +
                                     std::to_string(entries[i].col) + ")");
        SparseMatrix s;
        s.rows_ = rows;
        s.cols_ = cols;
        s.row_ptr_.assign(rows + 1, 0);
        s.col_.reserve(entries.size());
        s.val_.reserve(entries.size());
        for (const Entry& e : entries) {
            ++s.row_ptr_[e.row + 1];
            s.col_.push_back(e.col);
            s.val_.push_back(e.value);
        }
        for (std::size_t r = 0; r < rows; ++r) s.row_ptr_[r + 1] += s.row_ptr_[r];
        s.build_transpose(entries);
        return s;
    }

    static SparseMatrix identity(std::size_t n) {
        std::vector<Entry> e;
        e.reserve(n);
        for (std::size_t i = 0; i < n; ++i) e.push_back({i, i, T{1}});
        return from_coo(n, n, std::move(e));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nnz() const { return val_.size(); }

    // out (+)= S * d
    void multiply_into(const DenseMatrix<T>& d, DenseMatrix<T>& out, bool accumulate,
                       int threads = 1) const {
        if (cols_ != d.rows()) throw ShapeError("spmm: sparse cols != dense rows");
        if (out.rows() != rows_ || out.cols() != d.cols()) out = DenseMatrix<T>(rows_, d.cols());
        const std::size_t w = d.cols();
        detail::parallel_rows(rows_, threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                T* dst = out.row(i);
                if (!accumulate) std::fill(dst, dst + w, T{0});
                for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) {
                    const T v = val_[p];
                    const T* src = d.row(col_[p]);
                    for (std::size_t j = 0; j < w; ++j) dst[j] += v * src[j];
                }
            }
        });
    }

    // out (+)= S^T * d
    void multiply_transpose_into(const DenseMatrix<T>& d, DenseMatrix<T>& out, bool accumulate,
                                 int threads = 1) const {
        if (rows_ != d.rows()) throw ShapeError("spmm^T: sparse rows != dense rows");
        if (out.rows() != cols_ || out.cols() != d.cols()) out = DenseMatrix<T>(cols_, d.cols());
        const std::size_t w = d.cols();
        detail::parallel_rows(cols_, threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                T* dst = out.row(i);
                if (!accumulate) std::fill(dst, dst + w, T{0});
                for (std::size_t p = t_row_ptr_[i]; p < t_row_ptr_[i + 1]; ++p) {
                    const T v = t_val_[p];
                    const T* src = d.row(t_col_[p]);
                    for (std::size_t j = 0; j < w; ++j) dst[j] += v * src[j];
                }
            }
        });
    }

    DenseMatrix<T> to_dense() const {
        DenseMatrix<T> m(rows_, cols_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) m(r, col_[p]) = val_[p];
        return m;
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) fn(r, col_[p], val_[p]);
    }

private:
    void build_transpose(const std::vector<Entry>& sorted) {
        std::vector<Entry> t(sorted.size());
        for (std::size_t i = 0; i < sorted.size(); ++i)
            t[i] = {sorted[i].col, sorted[i].row, sorted[i].value};
        std::sort(t.begin(), t.end(), [](const Entry& a, const Entry& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        t_row_ptr_.assign(cols_ + 1, 0);
        t_col_.reserve(t.size());
        t_val_.reserve(t.size());
        for (const Entry& e : t) {
            ++t_row_ptr_[e.row + 1];
            t_col_.push_back(e.col);
            t_val_.push_back(e.value);
        }
        for (std::size_t r = 0; r < cols_; ++r) t_row_ptr_[r + 1] += t_row_ptr_[r];
    }

    std::size_t rows_ = 0, cols_ = 0;
    std::vector<std::size_t> row_ptr_, col_;
    std::vector<T> val_;
    std::vector<std::size_t> t_row_ptr_, t_col_;
    std::vector<T> t_val_;
};

}  // namespace rkdea
