#pragma once

namespace crowd::parallel {

// True when OpenMP support was compiled in.
bool available();

// Deterministic mode forces every kernel onto its sequential path.
void set_deterministic(bool on);
bool deterministic();

// Whether kernels may fan out right now (available and not deterministic).
bool enabled();

int max_threads();

// Forces sequential execution for the lifetime of the scope.
class SerialScope {
public:
    SerialScope();
    ~SerialScope();
    SerialScope(const SerialScope&) = delete;
    SerialScope& operator=(const SerialScope&) = delete;

private:
    bool previous_;
};

}  // namespace crowd::parallel
