# Repository pattern for the results store
