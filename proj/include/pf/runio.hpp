#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace pf {

// Worker cap: PERSONA_FORGE_THREADS when set, hardware concurrency otherwise.
int thread_budget();

// Runs fn(0..n-1) over at most `threads` workers (0 = thread_budget()).
// Work items must be independent; results keyed by index stay deterministic
// regardless of the worker count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

void ensure_dir(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
bool file_exists(const std::string& path);

std::string csv_join(const std::vector<std::string>& cells);
std::string format_double(double v); // shortest round-trip formatting

// Minimal polyline plot, one series per curve, shared x = index.
struct CurveSeries {
    std::string label;
    std::vector<double> values;
};
std::string render_curve_svg(const std::string& title, const std::vector<CurveSeries>& series);

} // namespace pf
