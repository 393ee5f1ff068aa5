"""Weighted cscK numerical lab package"""
