#include <cstring>
#include <vector>

#include "doctest.h"
#include "msrg/kernels.hpp"
#include "msrg/rng.hpp"

using namespace msrg;

namespace {

std::vector<float> random_buf(int64_t n, Rng& rng) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-3.0, 3.0));
    return v;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * 4) == 0;
}

}  // namespace

TEST_CASE("parallel matmul kernels are bit-identical to the serial reference") {
    Rng rng(11);
    // Sizes straddle the parallel cutover on purpose.
    for (int64_t m : {1, 3, 17, 64}) {
        for (int64_t n : {1, 5, 32}) {
            for (int64_t p : {2, 19, 48}) {
                const auto a = random_buf(m * n, rng);
                const auto b_nn = random_buf(n * p, rng);
                std::vector<float> s(static_cast<size_t>(m * p)), q(static_cast<size_t>(m * p));
                kernels::serial::matmul_nn(a.data(), b_nn.data(), s.data(), m, n, p);
                kernels::parallel::matmul_nn(a.data(), b_nn.data(), q.data(), m, n, p);
                REQUIRE(same_bits(s, q));

                const auto b_nt = random_buf(p * n, rng);
                kernels::serial::matmul_nt(a.data(), b_nt.data(), s.data(), m, n, p);
                kernels::parallel::matmul_nt(a.data(), b_nt.data(), q.data(), m, n, p);
                REQUIRE(same_bits(s, q));

                const auto b_tn = random_buf(m * p, rng);
                std::vector<float> st(static_cast<size_t>(n * p)), qt(static_cast<size_t>(n * p));
                kernels::serial::matmul_tn(a.data(), b_tn.data(), st.data(), m, n, p);
                kernels::parallel::matmul_tn(a.data(), b_tn.data(), qt.data(), m, n, p);
                REQUIRE(same_bits(st, qt));
            }
        }
    }
}

TEST_CASE("parallel elementwise kernels are bit-identical to serial") {
    Rng rng(12);
    for (int64_t n : {1, 100, 40000, 100001}) {
        const auto a = random_buf(n, rng);
        const auto b = random_buf(n, rng);
        std::vector<float> s(static_cast<size_t>(n)), q(static_cast<size_t>(n));

        kernels::serial::add(a.data(), b.data(), s.data(), n);
        kernels::parallel::add(a.data(), b.data(), q.data(), n);
        CHECK(same_bits(s, q));

        kernels::serial::sub(a.data(), b.data(), s.data(), n);
        kernels::parallel::sub(a.data(), b.data(), q.data(), n);
        CHECK(same_bits(s, q));

        kernels::serial::mul(a.data(), b.data(), s.data(), n);
        kernels::parallel::mul(a.data(), b.data(), q.data(), n);
        CHECK(same_bits(s, q));

        kernels::serial::scale(a.data(), 0.37, s.data(), n);
        kernels::parallel::scale(a.data(), 0.37, q.data(), n);
        CHECK(same_bits(s, q));

        kernels::serial::relu(a.data(), s.data(), n);
        kernels::parallel::relu(a.data(), q.data(), n);
        CHECK(same_bits(s, q));

        std::vector<float> ys = b, yq = b;
        kernels::serial::axpy(-1.25, a.data(), ys.data(), n);
        kernels::parallel::axpy(-1.25, a.data(), yq.data(), n);
        CHECK(same_bits(ys, yq));

        std::vector<float> gs(static_cast<size_t>(n), 0.5f), gq(static_cast<size_t>(n), 0.5f);
        kernels::serial::relu_backward(a.data(), b.data(), gs.data(), n);
        kernels::parallel::relu_backward(a.data(), b.data(), gq.data(), n);
        CHECK(same_bits(gs, gq));
    }
}

TEST_CASE("parallel reductions are bit-identical to serial across chunk boundaries") {
    Rng rng(13);
    for (int64_t n : {1, 4095, 4096, 4097, 3 * 4096 + 7, 100000}) {
        const auto a = random_buf(n, rng);
        const auto b = random_buf(n, rng);
        CHECK(kernels::serial::sum(a.data(), n) == kernels::parallel::sum(a.data(), n));
        CHECK(kernels::serial::sum_abs(a.data(), n) == kernels::parallel::sum_abs(a.data(), n));
        CHECK(kernels::serial::sum_sq(a.data(), n) == kernels::parallel::sum_sq(a.data(), n));
        CHECK(kernels::serial::dot(a.data(), b.data(), n) ==
              kernels::parallel::dot(a.data(), b.data(), n));
        CHECK(kernels::serial::sum_abs_diff(a.data(), b.data(), n) ==
              kernels::parallel::sum_abs_diff(a.data(), b.data(), n));
    }
}

TEST_CASE("backend dispatch honors the selected backend") {
    const kernels::Backend saved = kernels::backend();
    kernels::set_backend(kernels::Backend::serial);
    CHECK(kernels::backend() == kernels::Backend::serial);
    kernels::set_backend(kernels::Backend::parallel);
    CHECK(kernels::backend() == kernels::Backend::parallel);
    kernels::set_backend(saved);
}
