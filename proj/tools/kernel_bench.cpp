// Serial vs OpenMP kernel comparison. Results must be bit-identical between
// backends; this target reports the throughput difference.

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>

#include "msrg/kernels.hpp"
#include "msrg/rng.hpp"

namespace {

double now_seconds() {
#ifdef _OPENMP
    return omp_get_wtime();
#else
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
#endif
}

std::vector<float> random_buffer(int64_t n, msrg::Rng& rng) {
    std::vector<float> buf(static_cast<size_t>(n));
    for (auto& v : buf) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return buf;
}

struct Row {
    std::string name;
    double serial_ms;
    double parallel_ms;
    bool bitexact;
};

template <typename Fn>
double time_ms(int reps, Fn&& fn) {
    fn();  // warm-up
    const double t0 = now_seconds();
    for (int r = 0; r < reps; ++r) fn();
    return (now_seconds() - t0) * 1000.0 / reps;
}

}  // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
    const int64_t mm = quick ? 96 : 384;
    const int64_t elems = quick ? 1 << 16 : 1 << 22;
    const int reps = quick ? 3 : 10;

    msrg::Rng rng(7);
    std::vector<Row> rows;

    {
        const auto a = random_buffer(mm * mm, rng);
        const auto b = random_buffer(mm * mm, rng);
        std::vector<float> out_s(static_cast<size_t>(mm * mm));
        std::vector<float> out_p(static_cast<size_t>(mm * mm));
        Row row;
        row.name = "matmul_nn " + std::to_string(mm) + "^3";
        row.serial_ms = time_ms(reps, [&] {
            msrg::kernels::serial::matmul_nn(a.data(), b.data(), out_s.data(), mm, mm, mm);
        });
        row.parallel_ms = time_ms(reps, [&] {
            msrg::kernels::parallel::matmul_nn(a.data(), b.data(), out_p.data(), mm, mm, mm);
        });
        row.bitexact = std::memcmp(out_s.data(), out_p.data(), out_s.size() * 4) == 0;
        rows.push_back(row);
    }
    {
        const auto a = random_buffer(mm * mm, rng);
        const auto b = random_buffer(mm * mm, rng);
        std::vector<float> out_s(static_cast<size_t>(mm * mm));
        std::vector<float> out_p(static_cast<size_t>(mm * mm));
        Row row;
        row.name = "matmul_nt " + std::to_string(mm) + "^3";
        row.serial_ms = time_ms(reps, [&] {
            msrg::kernels::serial::matmul_nt(a.data(), b.data(), out_s.data(), mm, mm, mm);
        });
        row.parallel_ms = time_ms(reps, [&] {
            msrg::kernels::parallel::matmul_nt(a.data(), b.data(), out_p.data(), mm, mm, mm);
        });
        row.bitexact = std::memcmp(out_s.data(), out_p.data(), out_s.size() * 4) == 0;
        rows.push_back(row);
    }
    {
        const auto a = random_buffer(elems, rng);
        const auto b = random_buffer(elems, rng);
        std::vector<float> out_s(static_cast<size_t>(elems));
        std::vector<float> out_p(static_cast<size_t>(elems));
        Row row;
        row.name = "add " + std::to_string(elems);
        row.serial_ms =
            time_ms(reps, [&] { msrg::kernels::serial::add(a.data(), b.data(), out_s.data(), elems); });
        row.parallel_ms = time_ms(
            reps, [&] { msrg::kernels::parallel::add(a.data(), b.data(), out_p.data(), elems); });
        row.bitexact = std::memcmp(out_s.data(), out_p.data(), out_s.size() * 4) == 0;
        rows.push_back(row);
    }
    {
        const auto a = random_buffer(elems, rng);
        double r_s = 0.0, r_p = 0.0;
        Row row;
        row.name = "sum_abs " + std::to_string(elems);
        row.serial_ms = time_ms(reps, [&] { r_s = msrg::kernels::serial::sum_abs(a.data(), elems); });
        row.parallel_ms =
            time_ms(reps, [&] { r_p = msrg::kernels::parallel::sum_abs(a.data(), elems); });
        row.bitexact = r_s == r_p;
        rows.push_back(row);
    }

#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: not enabled\n");
#endif
    std::printf("%-22s %12s %12s %9s %9s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "bitexact");
    bool all_exact = true;
    for (const Row& row : rows) {
        std::printf("%-22s %12.3f %12.3f %8.2fx %9s\n", row.name.c_str(), row.serial_ms,
                    row.parallel_ms, row.serial_ms / row.parallel_ms,
                    row.bitexact ? "yes" : "NO");
        all_exact = all_exact && row.bitexact;
    }
    return all_exact ? 0 : 1;
}
