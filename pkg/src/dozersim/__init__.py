"""Dozer grading simulator with strapdown INS + error-state EKF in the loop."""
